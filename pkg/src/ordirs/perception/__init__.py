"""Perception pipeline: detector, promptable segmenter, captioner, depth estimator."""

from ordirs.perception.contracts import DEFAULT_LEXICON, Detection, PerceptionBackend, PipelineConfig
from ordirs.perception.pipeline import (
    build_dt_frame,
    build_dt_stream,
    describe_region,
    detect,
    estimate_depth,
    segment_box,
    suppress_duplicates,
)

__all__ = [
    "DEFAULT_LEXICON",
    "Detection",
    "PerceptionBackend",
    "PipelineConfig",
    "build_dt_frame",
    "build_dt_stream",
    "describe_region",
    "detect",
    "estimate_depth",
    "segment_box",
    "suppress_duplicates",
]
