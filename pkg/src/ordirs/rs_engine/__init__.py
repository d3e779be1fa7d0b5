"""Reasoning segmentation: reason, retrieve, synthesize."""

from ordirs.rs_engine.filters import (
    And,
    Anchor,
    Label,
    Not,
    Or,
    Sem,
    Spatial,
    ZoneRef,
    format_filter,
    parse_filter,
)
from ordirs.rs_engine.pipeline import segment_frame, segment_frames
from ordirs.rs_engine.plan import ReasoningPlan, Requirement, decompose_query, plan_from_filters
from ordirs.rs_engine.retrieval import (
    DEFAULT_TAXONOMY,
    FrameEvaluator,
    Retrieval,
    SegmentationResult,
    TraceRecord,
    label_matches,
    retrieve,
    synthesize,
)

__all__ = [
    "And",
    "Anchor",
    "DEFAULT_TAXONOMY",
    "FrameEvaluator",
    "Label",
    "Not",
    "Or",
    "ReasoningPlan",
    "Requirement",
    "Retrieval",
    "SegmentationResult",
    "Sem",
    "Spatial",
    "TraceRecord",
    "ZoneRef",
    "decompose_query",
    "format_filter",
    "label_matches",
    "parse_filter",
    "plan_from_filters",
    "retrieve",
    "segment_frame",
    "segment_frames",
    "synthesize",
]
