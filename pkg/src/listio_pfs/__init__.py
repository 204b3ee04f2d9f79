"""Miniature striped parallel file system with three noncontiguous I/O
strategies (multiple, data sieving, list I/O) and a benchmark harness."""

from .client import (
    AccessPlan,
    ClientMetrics,
    FileSession,
    ListIoConfig,
    SievingConfig,
    access_list,
    access_multiple,
    access_sieving_read,
    access_sieving_write,
    metrics_snapshot,
    pvfs_close,
    pvfs_create,
    pvfs_open,
    pvfs_read,
    pvfs_read_list,
    pvfs_write,
    pvfs_write_list,
)
from .errors import (
    BenchError,
    ExistsError,
    NotFoundError,
    PfsError,
    PlanError,
    ProtocolError,
    TokenError,
    WorkloadError,
)
from .regions import (
    Region,
    RegionList,
    StripingParams,
    TransferPiece,
    batch_regions,
    coalesce,
    extent,
    intersect_transfer_pieces,
    split_by_server,
    stripe_location,
    useful_fraction,
)
from .server import FileMetadata, IoDaemon, Manager

__all__ = [
    "AccessPlan",
    "BenchError",
    "ClientMetrics",
    "ExistsError",
    "FileMetadata",
    "FileSession",
    "IoDaemon",
    "ListIoConfig",
    "Manager",
    "NotFoundError",
    "PfsError",
    "PlanError",
    "ProtocolError",
    "Region",
    "RegionList",
    "SievingConfig",
    "StripingParams",
    "TokenError",
    "TransferPiece",
    "WorkloadError",
    "access_list",
    "access_multiple",
    "access_sieving_read",
    "access_sieving_write",
    "batch_regions",
    "coalesce",
    "extent",
    "intersect_transfer_pieces",
    "metrics_snapshot",
    "pvfs_close",
    "pvfs_create",
    "pvfs_open",
    "pvfs_read",
    "pvfs_read_list",
    "pvfs_write",
    "pvfs_write_list",
    "split_by_server",
    "stripe_location",
    "useful_fraction",
]
