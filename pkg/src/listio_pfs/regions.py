"""Byte-range algebra for striped files.

Everything here is pure arithmetic over (offset, length) pairs: round-robin
stripe mapping, splitting file ranges per server, pairing memory and file
region lists into transfer pieces, batching, extents and coalescing. All
offsets and lengths are byte counts that must fit in 64 bits.
"""

from __future__ import annotations

from typing import Iterable, Iterator, NamedTuple

from .errors import PlanError

U64_MAX = 2**64 - 1

DEFAULT_STRIPE_SIZE = 16384
DEFAULT_REGION_LIMIT = 64


class Region(NamedTuple):
    offset: int
    length: int

    @property
    def end(self) -> int:
        return self.offset + self.length


class StripingParams(NamedTuple):
    """Round-robin placement: starting server slot, slot count, stripe size."""

    base: int = 0
    pcount: int = 8
    ssize: int = DEFAULT_STRIPE_SIZE

    def validate(self) -> "StripingParams":
        if self.pcount < 1:
            raise ValueError("pcount must be >= 1")
        if self.ssize < 1:
            raise ValueError("ssize must be >= 1")
        if not 0 <= self.base < self.pcount:
            raise ValueError("base must be in [0, pcount)")
        return self


class TransferPiece(NamedTuple):
    """A span contiguous in both the memory list and the file list."""

    mem_offset: int
    file_offset: int
    length: int


class RegionList:
    """Immutable sequence of nonempty regions with a cached byte total."""

    __slots__ = ("_regions", "total_length")

    def __init__(self, regions: Iterable[Region | tuple[int, int]] = ()):
        regs = tuple(
            r if type(r) is Region else Region(r[0], r[1]) for r in regions
        )
        total = 0
        for r in regs:
            if r.length <= 0:
                raise PlanError(f"region {r!r} has non-positive length")
            if r.offset < 0 or r.offset + r.length > U64_MAX:
                raise PlanError(f"region {r!r} outside the 64-bit byte space")
            total += r.length
        self._regions = regs
        self.total_length = total

    @classmethod
    def _wrap(cls, regions: tuple[Region, ...], total: int | None = None) -> "RegionList":
        # Internal constructor for regions already known to be valid.
        obj = cls.__new__(cls)
        obj._regions = regions
        obj.total_length = sum(r.length for r in regions) if total is None else total
        return obj

    def __len__(self) -> int:
        return len(self._regions)

    def __iter__(self) -> Iterator[Region]:
        return iter(self._regions)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return RegionList._wrap(self._regions[index])
        return self._regions[index]

    def __eq__(self, other) -> bool:
        if isinstance(other, RegionList):
            return self._regions == other._regions
        return NotImplemented

    def __hash__(self):
        return hash(self._regions)

    def __repr__(self) -> str:
        return f"RegionList({list(self._regions)!r})"

    def is_sorted_disjoint(self) -> bool:
        """True when regions ascend by offset and never overlap."""
        prev_end = -1
        for r in self._regions:
            if r.offset < prev_end:
                return False
            prev_end = r.end
        return True


def stripe_location(offset: int, sp: StripingParams) -> tuple[int, int]:
    """Map a file byte offset to (server slot, server-local offset)."""
    k, within = divmod(offset, sp.ssize)
    return (sp.base + k) % sp.pcount, (k // sp.pcount) * sp.ssize + within


def inverse_stripe_location(server: int, local_offset: int, sp: StripingParams) -> int:
    """Map (server slot, server-local offset) back to the file byte offset."""
    j, within = divmod(local_offset, sp.ssize)
    k = j * sp.pcount + (server - sp.base) % sp.pcount
    return k * sp.ssize + within


def stripe_chunks(
    offset: int, length: int, sp: StripingParams
) -> Iterator[tuple[int, int, int, int]]:
    """Yield (server, local_offset, file_offset, length) stripe-bounded runs.

    Runs come out in ascending file order and never cross a stripe edge.
    """
    pos = offset
    end = offset + length
    while pos < end:
        server, local = stripe_location(pos, sp)
        take = min(end - pos, sp.ssize - pos % sp.ssize)
        yield server, local, pos, take
        pos += take


def server_spans(offset: int, length: int, sp: StripingParams) -> dict[int, Region]:
    """Per-server local span covering a contiguous file range.

    A contiguous file range always lands as one contiguous local range on
    each server it touches, so a single (offset, length) per server
    suffices; each is computed from the range's first and last stripe on
    that server rather than by walking every stripe.
    """
    if length <= 0:
        return {}
    end = offset + length
    k0 = offset // sp.ssize
    k1 = (end - 1) // sp.ssize
    spans: dict[int, Region] = {}
    for rel in range(min(sp.pcount, k1 - k0 + 1)):
        k_first = k0 + rel
        server = (sp.base + k_first) % sp.pcount
        k_last = k_first + ((k1 - k_first) // sp.pcount) * sp.pcount
        start = max(offset, k_first * sp.ssize)
        stop = min(end, (k_last + 1) * sp.ssize)
        local_start = (k_first // sp.pcount) * sp.ssize + (start - k_first * sp.ssize)
        local_stop = (k_last // sp.pcount) * sp.ssize + (stop - k_last * sp.ssize)
        spans[server] = Region(local_start, local_stop - local_start)
    return spans


def stripe_fragments(
    regions: Iterable[Region], sp: StripingParams
) -> Iterator[tuple[int, int, int, int]]:
    """Stripe-bounded fragments of many regions: (server, local, file, length)."""
    for r in regions:
        yield from stripe_chunks(r.offset, r.length, sp)


def split_by_server(file_regions: RegionList, sp: StripingParams) -> dict[int, RegionList]:
    """Split sorted, non-overlapping file regions into per-server local lists.

    Regions spanning stripe edges are split there; fragments are never
    re-merged, and each server's list comes out sorted by local offset.
    """
    out: dict[int, list[Region]] = {}
    for server, local, _pos, take in stripe_fragments(file_regions, sp):
        out.setdefault(server, []).append(Region(local, take))
    return {srv: RegionList._wrap(tuple(regs)) for srv, regs in out.items()}


def iter_transfer_pieces(
    mem: Iterable[Region], file: Iterable[Region]
) -> Iterator[TransferPiece]:
    """Walk two region lists in lockstep, emitting their overlap pieces.

    A piece ends wherever either list moves to its next entry; adjacent
    entries are never merged, so piece count reflects list granularity.
    Raises PlanError when the lists cover different byte totals.
    """
    mem_it = iter(mem)
    file_it = iter(file)
    m = next(mem_it, None)
    f = next(file_it, None)
    m_used = f_used = 0
    while m is not None and f is not None:
        take = min(m.length - m_used, f.length - f_used)
        yield TransferPiece(m.offset + m_used, f.offset + f_used, take)
        m_used += take
        f_used += take
        if m_used == m.length:
            m = next(mem_it, None)
            m_used = 0
        if f_used == f.length:
            f = next(file_it, None)
            f_used = 0
    if m is not None or f is not None:
        raise PlanError("memory and file lists cover different byte totals")


def intersect_transfer_pieces(mem: RegionList, file: RegionList) -> list[TransferPiece]:
    if mem.total_length != file.total_length:
        raise PlanError(
            f"memory covers {mem.total_length} bytes but file covers "
            f"{file.total_length}"
        )
    return list(iter_transfer_pieces(mem, file))


def count_transfer_pieces(mem: Iterable[Region], file: Iterable[Region]) -> int:
    """Piece count for (possibly lazily generated) region sequences."""
    n = 0
    for _ in iter_transfer_pieces(mem, file):
        n += 1
    return n


def batch_regions(
    file_regions: RegionList, limit: int = DEFAULT_REGION_LIMIT
) -> list[RegionList]:
    """Chop a region list into order-preserving batches of at most `limit`."""
    if limit < 1:
        raise ValueError("batch limit must be >= 1")
    return [file_regions[i : i + limit] for i in range(0, len(file_regions), limit)]


def extent(file_regions: RegionList) -> Region:
    """Minimal region covering a sorted, non-empty region list."""
    if len(file_regions) == 0:
        raise PlanError("extent of an empty region list")
    first = file_regions[0]
    last = file_regions[len(file_regions) - 1]
    return Region(first.offset, last.end - first.offset)


def coalesce(regions: RegionList) -> RegionList:
    """Merge adjacent or overlapping regions of a sorted list."""
    merged: list[Region] = []
    for r in regions:
        if merged and r.offset <= merged[-1].end:
            prev = merged[-1]
            merged[-1] = Region(prev.offset, max(prev.end, r.end) - prev.offset)
        else:
            merged.append(r)
    return RegionList._wrap(tuple(merged))


def useful_fraction(file_regions: RegionList) -> float:
    """Requested bytes over extent bytes; the sieving waste metric."""
    return file_regions.total_length / extent(file_regions).length
