"""Client library: file sessions, the list API, and the access strategies.

A FileSession talks to the manager for metadata and the token, and directly
to the I/O daemons for data. Three strategies satisfy a noncontiguous
access plan:

* multiple I/O    - one contiguous request per transfer piece;
* data sieving    - fetch the plan's file extent in large windows and
                    scatter/overlay in client memory (writes read-modify-write
                    under the manager's per-file token);
* list I/O        - batches of up to 64 file regions per request, carried as
                    trailing data.

All strategies move byte-identical data; they differ in request counts and
in how much unwanted data crosses the wire, which ClientMetrics records.
"""

from __future__ import annotations

import itertools
import socket
import time
from bisect import bisect_right
from dataclasses import dataclass, replace

from . import wire
from .errors import (
    ExistsError,
    NotFoundError,
    PfsError,
    PlanError,
    ProtocolError,
    TokenError,
)
from .regions import (
    DEFAULT_REGION_LIMIT,
    Region,
    RegionList,
    StripingParams,
    batch_regions,
    extent,
    inverse_stripe_location,
    iter_transfer_pieces,
    server_spans,
    stripe_chunks,
)
from .server import parse_addr

DEFAULT_SIEVING_BUFFER = 32 * 1024 * 1024


@dataclass
class SievingConfig:
    buffer_size: int = DEFAULT_SIEVING_BUFFER

    def __post_init__(self):
        if self.buffer_size < 1:
            raise ValueError("sieving buffer must be >= 1 byte")


@dataclass
class ListIoConfig:
    region_limit: int = DEFAULT_REGION_LIMIT

    def __post_init__(self):
        if not 1 <= self.region_limit <= wire.MAX_LIST_REGIONS:
            raise ValueError(
                f"region limit must be in 1..{wire.MAX_LIST_REGIONS}"
            )


@dataclass
class ClientMetrics:
    """Per-run counters.

    logical_requests counts strategy-level I/O requests: one per transfer
    piece for multiple I/O, one per 64-region batch for list I/O, one per
    fetched window (two per window written back) for sieving.
    server_messages counts actual wire messages to I/O daemons, which can
    differ once striping fans a request out; wire bytes count data
    payloads only. useful_bytes is the plan's own byte total.
    """

    logical_requests: int = 0
    server_messages: int = 0
    wire_bytes_read: int = 0
    wire_bytes_written: int = 0
    useful_bytes: int = 0
    elapsed: float = 0.0

    def add(self, other: "ClientMetrics") -> None:
        self.logical_requests += other.logical_requests
        self.server_messages += other.server_messages
        self.wire_bytes_read += other.wire_bytes_read
        self.wire_bytes_written += other.wire_bytes_written
        self.useful_bytes += other.useful_bytes
        self.elapsed += other.elapsed

    def minus(self, earlier: "ClientMetrics") -> "ClientMetrics":
        return ClientMetrics(
            self.logical_requests - earlier.logical_requests,
            self.server_messages - earlier.server_messages,
            self.wire_bytes_read - earlier.wire_bytes_read,
            self.wire_bytes_written - earlier.wire_bytes_written,
            self.useful_bytes - earlier.useful_bytes,
            self.elapsed - earlier.elapsed,
        )


class AccessPlan:
    """Paired memory and file region lists describing one noncontiguous access.

    The i-th byte of the flattened memory list corresponds to the i-th byte
    of the flattened file list. The file list must be sorted and
    non-overlapping; the memory list may be in any order.
    """

    __slots__ = ("mem", "file", "total_length", "_mem_starts", "_file_starts",
                 "_file_offsets")

    def __init__(self, mem, file):
        mem = mem if isinstance(mem, RegionList) else RegionList(mem)
        file = file if isinstance(file, RegionList) else RegionList(file)
        if mem.total_length != file.total_length:
            raise PlanError(
                f"memory list covers {mem.total_length} bytes but file list "
                f"covers {file.total_length}"
            )
        if not file.is_sorted_disjoint():
            raise PlanError("file regions must be sorted and non-overlapping")
        self.mem = mem
        self.file = file
        self.total_length = file.total_length
        self._mem_starts: list[int] | None = None
        self._file_starts: list[int] | None = None
        self._file_offsets: list[int] | None = None

    def _mem_index(self) -> list[int]:
        if self._mem_starts is None:
            starts = [0] * len(self.mem)
            pos = 0
            for i, r in enumerate(self.mem):
                starts[i] = pos
                pos += r.length
            self._mem_starts = starts
        return self._mem_starts

    def _file_index(self) -> tuple[list[int], list[int]]:
        if self._file_starts is None:
            starts = [0] * len(self.file)
            offsets = [0] * len(self.file)
            pos = 0
            for i, r in enumerate(self.file):
                starts[i] = pos
                offsets[i] = r.offset
                pos += r.length
            self._file_starts = starts
            self._file_offsets = offsets
        return self._file_starts, self._file_offsets

    def file_pos(self, file_offset: int) -> int:
        """Plan position of a byte that lies inside some file region."""
        starts, offsets = self._file_index()
        i = bisect_right(offsets, file_offset) - 1
        return starts[i] + (file_offset - offsets[i])

    def file_start(self, region_index: int) -> int:
        return self._file_index()[0][region_index]

    def scatter(self, buffer, pos: int, data) -> None:
        """Copy plan bytes [pos, pos+len(data)) into the memory regions."""
        starts = self._mem_index()
        i = bisect_right(starts, pos) - 1
        taken = 0
        n = len(data)
        while taken < n:
            r = self.mem[i]
            intra = pos - starts[i]
            take = min(n - taken, r.length - intra)
            buffer[r.offset + intra : r.offset + intra + take] = data[
                taken : taken + take
            ]
            taken += take
            pos += take
            i += 1

    def gather(self, buffer, pos: int, length: int) -> bytes:
        """Collect plan bytes [pos, pos+length) from the memory regions."""
        starts = self._mem_index()
        i = bisect_right(starts, pos) - 1
        parts = []
        taken = 0
        while taken < length:
            r = self.mem[i]
            intra = pos - starts[i]
            take = min(length - taken, r.length - intra)
            parts.append(bytes(buffer[r.offset + intra : r.offset + intra + take]))
            taken += take
            pos += take
            i += 1
        return b"".join(parts)


def _raise_for_status(status: int, detail: bytes) -> None:
    message = detail.decode("utf-8", "replace")
    if status == wire.STATUS_EXISTS:
        raise ExistsError(message)
    if status == wire.STATUS_NOT_FOUND:
        raise NotFoundError(message)
    if status == wire.STATUS_PROTOCOL:
        raise ProtocolError(message)
    if status == wire.STATUS_TOKEN:
        raise TokenError(message)
    if status == wire.STATUS_INVALID:
        raise ValueError(message)
    raise PfsError(f"server error {status}: {message}")


class _Channel:
    """One request/response connection to a manager or daemon."""

    def __init__(self, addr: str):
        self.addr = addr
        self.sock = socket.create_connection(parse_addr(addr))
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._rid = itertools.count(1)

    def request(
        self,
        opcode: int,
        *,
        handle: int = 0,
        offset: int = 0,
        length: int = 0,
        regions: RegionList | None = None,
        payload=None,
        out: memoryview | None = None,
    ):
        """Send one request and wait for its response.

        Returns the payload bytes, or the payload length when `out` is
        given (the payload is received straight into it).
        """
        rid = next(self._rid)
        header = wire.IoRequestHeader(
            opcode,
            request_id=rid,
            file_handle=handle,
            offset=offset,
            length=length,
            region_count=0 if regions is None else len(regions),
        )
        wire.send_request(self.sock, header, regions, payload)
        got_rid, status, result = wire.recv_response(self.sock, out=out)
        if got_rid != rid:
            raise ProtocolError(
                f"response id {got_rid} does not match request id {rid}"
            )
        if status != wire.STATUS_OK:
            detail = result if isinstance(result, bytes) else b""
            _raise_for_status(status, detail)
        return result

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class FileSession:
    """A client's handle on one open file; not shared between threads."""

    def __init__(self, manager: _Channel, name: str, handle: int,
                 striping: StripingParams, size: int, roster: list[str]):
        self._manager = manager
        self.name = name
        self.handle = handle
        self.striping = striping
        self.open_size = size
        self.roster = roster
        self._daemons: dict[int, _Channel] = {}
        self.metrics = ClientMetrics()

    def _daemon(self, slot: int) -> _Channel:
        channel = self._daemons.get(slot)
        if channel is None:
            channel = _Channel(self.roster[slot])
            channel.request(wire.OPEN, handle=self.handle)  # attach
            self._daemons[slot] = channel
        return channel

    def stat(self) -> int:
        """Current file size: max written end across daemons, unstriped."""
        end = 0
        for slot in range(self.striping.pcount):
            payload = self._daemon(slot).request(wire.STAT, handle=self.handle)
            local = wire.unpack_u64(payload)
            if local:
                back = inverse_stripe_location(slot, local - 1, self.striping)
                end = max(end, back + 1)
        return end

    def acquire_token(self) -> None:
        self._manager.request(wire.TOKEN_ACQUIRE, handle=self.handle)

    def release_token(self) -> None:
        self._manager.request(wire.TOKEN_RELEASE, handle=self.handle)

    def close(self) -> None:
        try:
            self._manager.request(wire.CLOSE, handle=self.handle)
        except (PfsError, OSError):
            pass
        for channel in self._daemons.values():
            channel.close()
        self._daemons.clear()
        self._manager.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def pvfs_create(
    manager_addr: str, name: str, striping: StripingParams = StripingParams()
) -> FileSession:
    channel = _Channel(manager_addr)
    try:
        payload = wire.encode_create_payload(name, striping)
        raw = channel.request(wire.CREATE, length=len(payload), payload=payload)
    except BaseException:
        channel.close()
        raise
    handle, sp, size, roster = wire.decode_metadata_payload(raw)
    return FileSession(channel, name, handle, sp, size, roster)


def pvfs_open(manager_addr: str, name: str) -> FileSession:
    channel = _Channel(manager_addr)
    try:
        raw = channel.request(
            wire.OPEN, length=len(name.encode("utf-8")),
            payload=name.encode("utf-8"),
        )
    except BaseException:
        channel.close()
        raise
    handle, sp, size, roster = wire.decode_metadata_payload(raw)
    return FileSession(channel, name, handle, sp, size, roster)


def pvfs_close(session: FileSession) -> None:
    session.close()


# -- contiguous primitives ------------------------------------------------

def _contig_read(session: FileSession, file_offset: int, out: memoryview) -> None:
    """One logical contiguous read, fanned out per server slot."""
    n = len(out)
    if n == 0:
        return
    sp = session.striping
    m = session.metrics
    m.logical_requests += 1
    spans = server_spans(file_offset, n, sp)
    if len(spans) == 1:
        ((slot, span),) = spans.items()
        session._daemon(slot).request(
            wire.READ, handle=session.handle,
            offset=span.offset, length=span.length, out=out,
        )
    else:
        chunks = {}
        for slot, span in spans.items():
            chunks[slot] = session._daemon(slot).request(
                wire.READ, handle=session.handle,
                offset=span.offset, length=span.length,
            )
        for slot, local, pos, take in stripe_chunks(file_offset, n, sp):
            start = local - spans[slot].offset
            out[pos - file_offset : pos - file_offset + take] = memoryview(
                chunks[slot]
            )[start : start + take]
    m.server_messages += len(spans)
    m.wire_bytes_read += n


def _contig_write(session: FileSession, file_offset: int, data) -> None:
    """One logical contiguous write, fanned out per server slot."""
    view = memoryview(data)
    n = len(view)
    if n == 0:
        return
    sp = session.striping
    m = session.metrics
    m.logical_requests += 1
    spans = server_spans(file_offset, n, sp)
    if len(spans) == 1:
        ((slot, span),) = spans.items()
        session._daemon(slot).request(
            wire.WRITE, handle=session.handle,
            offset=span.offset, length=span.length, payload=view,
        )
    else:
        payloads = {slot: bytearray(span.length) for slot, span in spans.items()}
        for slot, local, pos, take in stripe_chunks(file_offset, n, sp):
            start = local - spans[slot].offset
            payloads[slot][start : start + take] = view[
                pos - file_offset : pos - file_offset + take
            ]
        for slot, span in spans.items():
            session._daemon(slot).request(
                wire.WRITE, handle=session.handle,
                offset=span.offset, length=span.length, payload=payloads[slot],
            )
    m.server_messages += len(spans)
    m.wire_bytes_written += n


def pvfs_read(session: FileSession, file_offset: int, out) -> int:
    """Read len(out) bytes at file_offset into the buffer span."""
    view = memoryview(out)
    t0 = time.perf_counter()
    _contig_read(session, file_offset, view)
    session.metrics.useful_bytes += len(view)
    session.metrics.elapsed += time.perf_counter() - t0
    return len(view)


def pvfs_write(session: FileSession, file_offset: int, data) -> int:
    """Write the buffer span at file_offset."""
    view = memoryview(data)
    t0 = time.perf_counter()
    _contig_write(session, file_offset, view)
    session.metrics.useful_bytes += len(view)
    session.metrics.elapsed += time.perf_counter() - t0
    return len(view)


# -- noncontiguous strategies ----------------------------------------------

def access_multiple(
    session: FileSession, plan: AccessPlan, buffer, direction: str
) -> ClientMetrics:
    """One contiguous request per transfer piece, in plan order."""
    _check_direction(direction)
    before = replace(session.metrics)
    t0 = time.perf_counter()
    view = memoryview(buffer)
    if direction == "read":
        for piece in iter_transfer_pieces(plan.mem, plan.file):
            _contig_read(
                session, piece.file_offset,
                view[piece.mem_offset : piece.mem_offset + piece.length],
            )
    else:
        for piece in iter_transfer_pieces(plan.mem, plan.file):
            _contig_write(
                session, piece.file_offset,
                view[piece.mem_offset : piece.mem_offset + piece.length],
            )
    session.metrics.useful_bytes += plan.total_length
    session.metrics.elapsed += time.perf_counter() - t0
    return session.metrics.minus(before)


def _window_fragments(plan: AccessPlan, buffer_size: int):
    """Yield (window_start, window_len, fragments) for non-empty windows.

    Windows tile the plan's file extent from its start in buffer_size steps;
    fragments are (file_offset, length, plan_position) triples clipped to
    the window. Windows containing no plan bytes are skipped.
    """
    ext = extent(plan.file)
    regions = plan.file
    count = len(regions)
    r = 0
    ws = ext.offset
    while ws < ext.end:
        we = min(ws + buffer_size, ext.end)
        fragments = []
        while r < count:
            reg = regions[r]
            if reg.offset >= we:
                break
            start = max(reg.offset, ws)
            stop = min(reg.end, we)
            if start < stop:
                fragments.append(
                    (start, stop - start,
                     plan.file_start(r) + (start - reg.offset))
                )
            if reg.end <= we:
                r += 1
            else:
                break
        if fragments:
            yield ws, we - ws, fragments
        ws = we


def access_sieving_read(
    session: FileSession, plan: AccessPlan, buffer,
    cfg: SievingConfig | None = None,
) -> ClientMetrics:
    """Fetch the plan extent in large windows, scattering wanted bytes."""
    cfg = cfg or SievingConfig()
    before = replace(session.metrics)
    t0 = time.perf_counter()
    if len(plan.file):
        view = memoryview(buffer)
        scratch = bytearray(min(cfg.buffer_size, extent(plan.file).length))
        for ws, wlen, fragments in _window_fragments(plan, cfg.buffer_size):
            window = memoryview(scratch)[:wlen]
            _contig_read(session, ws, window)
            for file_off, length, pos in fragments:
                plan.scatter(view, pos, window[file_off - ws : file_off - ws + length])
    session.metrics.useful_bytes += plan.total_length
    session.metrics.elapsed += time.perf_counter() - t0
    return session.metrics.minus(before)


def access_sieving_write(
    session: FileSession, plan: AccessPlan, buffer,
    cfg: SievingConfig | None = None,
) -> ClientMetrics:
    """Read-modify-write each extent window under the per-file token.

    Every non-empty window is read in full, overlaid with plan bytes, and
    written back in full, so bytes outside the plan's regions survive. The
    token is held across all windows of the access.
    """
    cfg = cfg or SievingConfig()
    before = replace(session.metrics)
    t0 = time.perf_counter()
    if len(plan.file):
        view = memoryview(buffer)
        scratch = bytearray(min(cfg.buffer_size, extent(plan.file).length))
        session.acquire_token()
        try:
            for ws, wlen, fragments in _window_fragments(plan, cfg.buffer_size):
                window = memoryview(scratch)[:wlen]
                _contig_read(session, ws, window)
                for file_off, length, pos in fragments:
                    window[file_off - ws : file_off - ws + length] = plan.gather(
                        view, pos, length
                    )
                _contig_write(session, ws, window)
        finally:
            session.release_token()
    session.metrics.useful_bytes += plan.total_length
    session.metrics.elapsed += time.perf_counter() - t0
    return session.metrics.minus(before)


def access_list(
    session: FileSession, plan: AccessPlan, buffer, direction: str,
    cfg: ListIoConfig | None = None,
) -> ClientMetrics:
    """Carry file regions as trailing data, 64 per request at most.

    Logical requests count pre-striping batches of the plan's file regions;
    each involved daemon receives that batch's stripe fragments re-batched
    at the same limit per wire message.
    """
    _check_direction(direction)
    cfg = cfg or ListIoConfig()
    before = replace(session.metrics)
    t0 = time.perf_counter()
    view = memoryview(buffer)
    m = session.metrics
    sp = session.striping
    limit = cfg.region_limit
    for batch in batch_regions(plan.file, limit):
        m.logical_requests += 1
        by_slot: dict[int, list[tuple[int, int, int]]] = {}
        for reg in batch:
            for slot, local, pos, take in stripe_chunks(reg.offset, reg.length, sp):
                by_slot.setdefault(slot, []).append((local, pos, take))
        for slot in sorted(by_slot):
            fragments = by_slot[slot]
            channel = session._daemon(slot)
            for i in range(0, len(fragments), limit):
                chunk = fragments[i : i + limit]
                regions = RegionList._wrap(
                    tuple(Region(local, take) for local, _pos, take in chunk)
                )
                total = regions.total_length
                if direction == "read":
                    data = channel.request(
                        wire.READ_LIST, handle=session.handle,
                        length=total, regions=regions,
                    )
                    if len(data) != total:
                        raise ProtocolError(
                            f"list read returned {len(data)} of {total} bytes"
                        )
                    taken = 0
                    for _local, pos, take in chunk:
                        plan.scatter(view, plan.file_pos(pos),
                                     memoryview(data)[taken : taken + take])
                        taken += take
                    m.wire_bytes_read += total
                else:
                    payload = b"".join(
                        plan.gather(view, plan.file_pos(pos), take)
                        for _local, pos, take in chunk
                    )
                    channel.request(
                        wire.WRITE_LIST, handle=session.handle,
                        length=total, regions=regions, payload=payload,
                    )
                    m.wire_bytes_written += total
                m.server_messages += 1
    m.useful_bytes += plan.total_length
    m.elapsed += time.perf_counter() - t0
    return session.metrics.minus(before)


def pvfs_read_list(
    session: FileSession, plan: AccessPlan, buffer,
    cfg: ListIoConfig | None = None,
) -> ClientMetrics:
    """The list API's read entry point; delegates to the list strategy."""
    return access_list(session, plan, buffer, "read", cfg)


def pvfs_write_list(
    session: FileSession, plan: AccessPlan, buffer,
    cfg: ListIoConfig | None = None,
) -> ClientMetrics:
    """The list API's write entry point; delegates to the list strategy."""
    return access_list(session, plan, buffer, "write", cfg)


def metrics_snapshot(session: FileSession) -> ClientMetrics:
    """Return accumulated session counters and reset them."""
    snap = session.metrics
    session.metrics = ClientMetrics()
    return snap


def _check_direction(direction: str) -> None:
    if direction not in ("read", "write"):
        raise ValueError(f"direction must be 'read' or 'write', got {direction!r}")
