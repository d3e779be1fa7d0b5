"""Digital-twin frame model, run-length mask codec, validation and streams."""

from ordirs.dt_core.model import BBox, DepthStats, DtFrame, Instance, canonical_float, instance_sort_key
from ordirs.dt_core.rle import RleMask, decode_rle, encode_rle
from ordirs.dt_core.stream import iter_stream, read_stream, write_stream
from ordirs.dt_core.validate import Violation, validate_frame

__all__ = [
    "BBox",
    "DepthStats",
    "DtFrame",
    "Instance",
    "RleMask",
    "Violation",
    "canonical_float",
    "decode_rle",
    "encode_rle",
    "instance_sort_key",
    "iter_stream",
    "read_stream",
    "validate_frame",
    "write_stream",
]
