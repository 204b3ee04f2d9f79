"""Command-line entry points: serve, bench, verify-counts."""

from __future__ import annotations

import argparse
import sys
import threading

from . import bench, workloads
from .errors import PfsError
from .server import IoDaemon, Manager, parse_addr


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="listio-pfs",
        description="Miniature striped parallel file system and noncontiguous "
                    "I/O benchmark harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run a manager or I/O daemon")
    serve.add_argument("--role", choices=("manager", "iod"), required=True)
    serve.add_argument("--addr", required=True, metavar="HOST:PORT")
    serve.add_argument("--storage-root", default="listio-pfs-data",
                       help="stripe storage directory (iod role)")
    serve.add_argument("--manager", metavar="HOST:PORT",
                       help="manager to register with (iod role)")

    run = sub.add_parser("bench", help="run a benchmark cell and emit metrics")
    run.add_argument("--workload", required=True, choices=workloads.WORKLOADS)
    run.add_argument("--strategy", default="multiple,sieving,list",
                     help="comma-separated subset of multiple,sieving,list")
    run.add_argument("--clients", type=int, default=8)
    run.add_argument("--servers", type=int, default=8)
    run.add_argument("--ssize", type=int, default=16384)
    run.add_argument("--accesses", type=_parse_int_list, default=None,
                     metavar="A[,A...]", help="per-client access counts")
    run.add_argument("--total-bytes", type=int, default=64 * 2**20)
    run.add_argument("--direction", choices=("read", "write"), default=None,
                     help="defaults to write for flash, read otherwise")
    run.add_argument("--sieving-buffer", type=int, default=32 * 2**20)
    run.add_argument("--list-limit", type=int, default=64)
    run.add_argument("--reps", type=int, default=3)
    run.add_argument("--verify", action="store_true")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--csv", metavar="PATH")
    run.add_argument("--csv-append", action="store_true")
    run.add_argument("--flash-blocks", type=int, default=80)
    run.add_argument("--enable-sieving-writes", action="store_true",
                     help="allow tokened read-modify-write sieving writes")
    run.add_argument("--external-cluster", metavar="HOST:PORT",
                     help="use a running manager instead of launching one")

    sub.add_parser("verify-counts",
                   help="print the analytic request-count table and exit")
    return parser


def _cmd_serve(args) -> int:
    host, port = parse_addr(args.addr)
    if args.role == "manager":
        node = Manager(host, port)
        node.start()
        print(f"manager listening on {node.address}", flush=True)
    else:
        node = IoDaemon(args.storage_root, host, port, manager_addr=args.manager)
        node.start()
        where = (f", registered with {args.manager} as slot {node.slot}"
                 if args.manager else "")
        print(f"iod listening on {node.address}{where}", flush=True)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        node.stop()
    return 0


def _cmd_bench(args) -> int:
    config = bench.BenchConfig(
        workload=args.workload,
        strategies=tuple(args.strategy.split(",")),
        clients=args.clients,
        servers=args.servers,
        ssize=args.ssize,
        accesses=args.accesses,
        total_bytes=args.total_bytes,
        direction=args.direction,
        sieving_buffer=args.sieving_buffer,
        list_limit=args.list_limit,
        reps=args.reps,
        verify=args.verify,
        seed=args.seed,
        flash_blocks=args.flash_blocks,
        allow_sieving_writes=args.enable_sieving_writes,
        external_manager=args.external_cluster,
    )
    report = bench.run_matrix(config)
    print(bench.CSV_COLUMNS)
    for row in bench.report_rows(report):
        print(row)
    if args.csv:
        bench.emit_report(report, args.csv, append=args.csv_append)
    if args.verify and not report.all_verified:
        for cell in report.cells:
            if cell.verified is False:
                print(f"VERIFY FAIL {cell.strategy}: {cell.failure}",
                      file=sys.stderr)
        return 1
    return 0


def _cmd_verify_counts() -> int:
    flash = workloads.FlashSpec(procs=1, proc_id=0)
    fc = workloads.flash_counts(flash)
    print("workload=flash blocks=80 interior=8x8x8 vars=24 element=8B")
    print(f"  file_regions/client      = {fc['file_regions']}")
    print(f"  region_bytes             = {fc['region_bytes']}")
    print(f"  multiple_requests/client = {fc['multiple_requests']}")
    print(f"  list_requests/client     = {fc['list_requests']}")
    print(f"  plan_bytes/client        = {fc['plan_bytes']}")
    print("  sieving_requests/client  = 1 (extent fits one 32 MiB window, "
          "procs <= 4)")
    tiled = workloads.TiledSpec(tile_x=0, tile_y=0)
    tc = workloads.tiled_counts(tiled)
    print("workload=tiled display=3x2 tile=1024x768x24bit overlap=270x128")
    print(f"  file_regions/tile        = {tc['file_regions']}")
    print(f"  region_bytes             = {tc['region_bytes']}")
    print(f"  multiple_requests/tile   = {tc['multiple_requests']}")
    print(f"  list_requests/tile       = {tc['list_requests']}")
    print(f"  plan_bytes/tile          = {tc['plan_bytes']}")
    print(f"  file_bytes               = {tc['file_bytes']}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "serve":
            return _cmd_serve(args)
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "verify-counts":
            return _cmd_verify_counts()
    except PfsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
