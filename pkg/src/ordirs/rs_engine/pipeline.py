"""End-to-end reason -> retrieve -> synthesize over a frame sequence."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Mapping, Sequence

from ordirs.dt_core import DtFrame
from ordirs.errors import OrdirsError
from ordirs.llm import LlmClient
from ordirs.rs_engine.plan import ReasoningPlan, decompose_query
from ordirs.rs_engine.retrieval import DEFAULT_TAXONOMY, SegmentationResult, failed_result, retrieve, synthesize
from ordirs.spatial import Zone

log = logging.getLogger(__name__)


def segment_frame(
    plan: ReasoningPlan,
    frame: DtFrame,
    llm: LlmClient | None,
    *,
    zones: Mapping[str, Zone] | None = None,
    taxonomy: Mapping[str, frozenset[str]] = DEFAULT_TAXONOMY,
) -> SegmentationResult:
    """One frame; failures become an error record instead of an exception."""
    t0 = time.perf_counter()
    try:
        r = retrieve(plan, frame, llm, zones=zones, taxonomy=taxonomy)
        result = synthesize(r.final, frame, r)
    except OrdirsError as exc:
        log.warning("frame %s/%d failed: %s", frame.video_id, frame.frame_index, exc)
        result = failed_result(frame, f"{type(exc).__name__}: {exc}")
    result.elapsed_s = time.perf_counter() - t0
    return result


def segment_frames(
    query: str,
    frames: Sequence[DtFrame],
    llm: LlmClient,
    *,
    plan: ReasoningPlan | None = None,
    zones: Mapping[str, Zone] | None = None,
    taxonomy: Mapping[str, frozenset[str]] = DEFAULT_TAXONOMY,
    jobs: int = 1,
) -> tuple[list[SegmentationResult], ReasoningPlan]:
    """Segment ``query`` in every frame.

    The query is decomposed once and the plan reused for all frames. A plan
    failure raises :class:`~ordirs.errors.PlanError`; per-frame failures are
    reported inside the corresponding result. Each result's ``elapsed_s``
    includes an equal share of the planning time.
    """
    t0 = time.perf_counter()
    if plan is None:
        plan = decompose_query(query, llm)
    plan_share = (time.perf_counter() - t0) / max(1, len(frames))

    def one(frame: DtFrame) -> SegmentationResult:
        return segment_frame(plan, frame, llm, zones=zones, taxonomy=taxonomy)

    ordered = sorted(frames, key=lambda f: (f.video_id, f.frame_index))
    if jobs > 1 and len(ordered) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, ordered))
    else:
        results = [one(f) for f in ordered]
    for r in results:
        r.elapsed_s += plan_share
    return results, plan
