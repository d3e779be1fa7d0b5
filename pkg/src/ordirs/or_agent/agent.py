"""Workflow-analysis agent: plan sub-queries, segment, analyse."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from ordirs.dt_core import DtFrame, RleMask
from ordirs.errors import ConfigError, InputError, OrdirsError, PlanError, ProgramError
from ordirs.llm import LlmClient
from ordirs.or_agent.program import AnalysisProgram, eval_analysis_program, parse_program, validate_program
from ordirs.rs_engine import SegmentationResult, segment_frames
from ordirs.rs_engine.plan import MAX_ATTEMPTS, prompt_with_repair
from ordirs.spatial import centroid

log = logging.getLogger(__name__)

MODES = ("semantic", "quantitative")
NARRATIVE_WINDOW = 40  # instances per semantic-mode prompt

ASPECT_INSTRUCTIONS = """\
You analyse operating-room workflow from video. Read the question and list
the key efficiency aspects that must be investigated to answer it, such as
arrivals, positioning, transfers, door traffic or idle periods.

Reply with exactly one JSON document:
{"aspects": [{"name": "...", "rationale": "..."}]}
"""

SUBQUERY_INSTRUCTIONS = """\
For each efficiency aspect write one segmentation sub-query: a short text
naming what to segment in every frame. Choose "quantitative" mode when the
aspect is answered by counts, durations or timings, and give an analysis
program; choose "semantic" mode for descriptive questions.

Analysis programs have one statement per line, name = OP(args), and end
with OUTPUT name[, name]. Series: presence, area, count, centroid_x,
centroid_y, or qN.presence for another sub-query's series. Operators:
THRESHOLD(series, tau), RISING_EDGES(s), FALLING_EDGES(s), FIRST_TRUE(s),
LAST_TRUE(s), COUNT_TRUE(s), DURATIONS(s), RATE(events, fps),
BETWEEN(frame_a, frame_b).

Reply with exactly one JSON document:
{"subqueries": [{"id": "q1", "aspect": "...", "text": "...", "mode": "quantitative", "program": "..."}]}
"""

NARRATIVE_INSTRUCTIONS = """\
Below is a per-frame summary of the instances segmented for a sub-query
(label, mask area in pixels, mean depth). Describe the temporal pattern
relevant to the aspect in a few sentences and cite the frames that best
show it.

Reply with exactly one JSON document:
{"narrative": "...", "cited_frames": [frame_index, ...]}
"""


@dataclass(frozen=True)
class SubQuery:
    subquery_id: str
    text: str
    aspect: str
    mode: str
    program: AnalysisProgram | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.subquery_id,
            "aspect": self.aspect,
            "text": self.text,
            "mode": self.mode,
            "program": self.program.text if self.program else None,
        }


@dataclass
class AnalysisResult:
    subquery_id: str
    aspect: str
    text: str
    mode: str
    metrics: dict[str, Any] = field(default_factory=dict)
    key_frames: list[int] = field(default_factory=list)
    narrative: str = ""
    error: str | None = None
    evidence: dict[int, str] = field(default_factory=dict)  # frame -> overlay ref, filled on render
    masks: dict[int, RleMask] = field(default_factory=dict, repr=False)
    results: list[SegmentationResult] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "subquery_id": self.subquery_id,
            "aspect": self.aspect,
            "text": self.text,
            "mode": self.mode,
            "metrics": self.metrics,
            "key_frames": self.key_frames,
            "narrative": self.narrative,
            "error": self.error,
            "evidence": {str(k): v for k, v in sorted(self.evidence.items())},
        }


def _aspects_from(doc: Any) -> list[dict[str, str]]:
    items = doc.get("aspects") if isinstance(doc, dict) else None
    if not isinstance(items, list) or not items:
        raise ValueError('expected {"aspects": [...]} with at least one aspect')
    out = []
    for a in items:
        name = a.get("name") if isinstance(a, dict) else a
        if not isinstance(name, str) or not name.strip():
            raise ValueError("every aspect needs a non-empty name")
        out.append({"name": name.strip(), "rationale": str(a.get("rationale", "")) if isinstance(a, dict) else ""})
    return out


def _subqueries_from(doc: Any) -> list[SubQuery]:
    items = doc.get("subqueries") if isinstance(doc, dict) else None
    if not isinstance(items, list) or not items:
        raise ValueError('expected {"subqueries": [...]} with at least one entry')
    ids = [str(i.get("id", "")) if isinstance(i, dict) else "" for i in items]
    if not all(ids) or len(set(ids)) != len(ids):
        raise ValueError(f"sub-query ids must be present and unique, got {ids}")
    out = []
    for sid, item in zip(ids, items):
        mode = item.get("mode")
        if mode not in MODES:
            raise ValueError(f"{sid}: mode must be one of {MODES}, got {mode!r}")
        text = item.get("text")
        if not isinstance(text, str) or not text.strip():
            raise ValueError(f"{sid}: text must be a non-empty string")
        program = None
        if mode == "quantitative":
            src = item.get("program")
            if not isinstance(src, str):
                raise ValueError(f"{sid}: quantitative sub-queries need a program")
            try:
                program = parse_program(src)
                validate_program(program, [i for i in ids if i != sid])
            except ProgramError as exc:
                raise ValueError(f"{sid}: {exc}") from None
        out.append(SubQuery(sid, text.strip(), str(item.get("aspect", sid)), mode, program))
    return out


def plan_analysis(
    query: str,
    llm: LlmClient,
    *,
    attempts: int = MAX_ATTEMPTS,
    transcripts: list[dict[str, Any]] | None = None,
) -> list[SubQuery]:
    """Two prompts: efficiency aspects first, then one sub-query per aspect."""
    if not query or not query.strip():
        raise InputError("query must not be empty")
    transcripts = [] if transcripts is None else transcripts
    aspects = prompt_with_repair(
        llm, "aspects", ASPECT_INSTRUCTIONS, {"query": query}, _aspects_from, attempts=attempts, transcripts=transcripts
    )
    return prompt_with_repair(
        llm,
        "subqueries",
        SUBQUERY_INSTRUCTIONS,
        {"query": query, "aspects": aspects},
        _subqueries_from,
        attempts=attempts,
        transcripts=transcripts,
    )


def series_from_results(results: Sequence[SegmentationResult]) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {k: [] for k in ("presence", "area", "count", "centroid_x", "centroid_y")}
    for r in results:
        area = r.mask.area
        cx, cy = centroid(r.mask) if area else (float("nan"), float("nan"))
        out["presence"].append(1.0 if area else 0.0)
        out["area"].append(float(area))
        out["count"].append(float(len(r.final)))
        out["centroid_x"].append(cx)
        out["centroid_y"].append(cy)
    return out


def summarize_frames(results: Sequence[SegmentationResult], frames: Sequence[DtFrame]) -> list[dict[str, Any]]:
    by_index = {f.frame_index: f for f in frames}
    rows = []
    for r in results:
        frame = by_index[r.frame_index]
        insts = []
        for iid in r.final:
            inst = frame.instance(iid)
            insts.append({"label": inst.label, "area": inst.mask.area, "depth": inst.depth.mean if inst.depth else None})
        rows.append({"frame_index": r.frame_index, "instances": insts})
    return rows


def _windows(rows: list[dict[str, Any]], cap: int) -> list[list[dict[str, Any]]]:
    chunks: list[list[dict[str, Any]]] = [[]]
    load = 0
    for row in rows:
        n = len(row["instances"])
        if chunks[-1] and load + n > cap:
            chunks.append([])
            load = 0
        chunks[-1].append(row)
        load += n
    return chunks


Engine = Callable[..., tuple[list[SegmentationResult], Any]]


def segment_subquery(sub: SubQuery, frames: Sequence[DtFrame], llm: LlmClient, engine: Engine = segment_frames) -> list[SegmentationResult]:
    results, _plan = engine(sub.text, frames, llm)
    return sorted(results, key=lambda r: r.frame_index)


def analyse(
    sub: SubQuery,
    results: Sequence[SegmentationResult],
    frames: Sequence[DtFrame],
    llm: LlmClient | None,
    *,
    fps: float = 1.0,
    other_series: Mapping[str, Sequence[float]] | None = None,
    attempts: int = MAX_ATTEMPTS,
) -> AnalysisResult:
    """Turn one sub-query's mask sequence into metrics or a narrative."""
    if fps <= 0:
        raise ConfigError(f"fps must be positive, got {fps}")
    out = AnalysisResult(sub.subquery_id, sub.aspect, sub.text, sub.mode, results=list(results))
    indices = [r.frame_index for r in results]
    errors = sorted({r.error for r in results if r.error})
    if errors:
        log.warning("%s: %d frame(s) failed", sub.subquery_id, sum(1 for r in results if r.error))
    if sub.mode == "quantitative":
        assert sub.program is not None
        series: dict[str, Sequence[float]] = dict(series_from_results(results))
        for name, values in (other_series or {}).items():
            series[name] = values
        needed = sub.program.series_refs()
        series = {k: v for k, v in series.items() if k in needed or "." not in k}
        known = sorted({n.split(".")[0] for n in needed if "." in n})
        try:
            po = eval_analysis_program(sub.program, series, fps, known)
        except (ProgramError, ConfigError) as exc:
            out.error = f"{type(exc).__name__}: {exc}"
            return out
        metrics = dict(po.metrics)
        for name in po.position_metrics:
            v = metrics[name]
            metrics[name] = [indices[p] for p in v] if isinstance(v, list) else (None if v is None else indices[v])
        out.metrics = metrics
        out.key_frames = sorted({indices[p] for p in po.key_positions})
    else:
        if llm is None:
            out.error = "semantic analysis needs a language model"
            return out
        rows = summarize_frames(results, frames)
        narratives, cited = [], set()
        try:
            for chunk in _windows(rows, NARRATIVE_WINDOW):
                payload = {"subquery_id": sub.subquery_id, "aspect": sub.aspect, "text": sub.text, "fps": fps, "frames": chunk}
                doc = prompt_with_repair(llm, "narrative", NARRATIVE_INSTRUCTIONS, payload, _narrative_from, attempts=attempts)
                narratives.append(doc["narrative"])
                window = {row["frame_index"] for row in chunk}
                for f in doc["cited_frames"]:
                    if f in window:
                        cited.add(f)
                    else:
                        log.warning("%s: dropping citation of frame %s outside the analysed range", sub.subquery_id, f)
        except PlanError as exc:
            out.error = f"PlanError: {exc}"
            return out
        out.narrative = " ".join(narratives)
        out.key_frames = sorted(cited)
    by_index = {r.frame_index: r for r in results}
    out.masks = {f: by_index[f].mask for f in out.key_frames}
    if errors and not out.error:
        out.metrics["frame_errors"] = len([r for r in results if r.error])
    return out


def _narrative_from(doc: Any) -> dict[str, Any]:
    if not isinstance(doc, dict) or not isinstance(doc.get("narrative"), str) or not doc["narrative"].strip():
        raise ValueError('expected {"narrative": "...", "cited_frames": [...]}')
    cited = doc.get("cited_frames", [])
    if not isinstance(cited, list) or not all(isinstance(c, int) for c in cited):
        raise ValueError("cited_frames must be a list of frame indices")
    return {"narrative": doc["narrative"].strip(), "cited_frames": cited}


def run_subquery(
    sub: SubQuery,
    frames: Sequence[DtFrame],
    llm: LlmClient,
    engine: Engine = segment_frames,
    *,
    fps: float = 1.0,
    other_series: Mapping[str, Sequence[float]] | None = None,
) -> AnalysisResult:
    if not frames:
        raise InputError("no frames to analyse")
    try:
        results = segment_subquery(sub, frames, llm, engine)
    except OrdirsError as exc:
        return AnalysisResult(sub.subquery_id, sub.aspect, sub.text, sub.mode, error=f"{type(exc).__name__}: {exc}")
    return analyse(sub, results, frames, llm, fps=fps, other_series=other_series)


def run_all(
    subs: Sequence[SubQuery],
    frames: Sequence[DtFrame],
    llm: LlmClient,
    engine: Engine = segment_frames,
    *,
    fps: float = 1.0,
    jobs: int = 1,
) -> list[AnalysisResult]:
    """Segment every sub-query (possibly concurrently), then analyse in order.

    Analysis runs after all segmentation so programs can read other
    sub-queries' series.
    """
    if not frames:
        raise InputError("no frames to analyse")
    frames = sorted(frames, key=lambda f: f.frame_index)

    def seg(sub: SubQuery) -> list[SegmentationResult] | str:
        try:
            return segment_subquery(sub, frames, llm, engine)
        except OrdirsError as exc:
            return f"{type(exc).__name__}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            segs = list(pool.map(seg, subs))
    else:
        segs = [seg(s) for s in subs]

    shared: dict[str, list[float]] = {}
    for sub, res in zip(subs, segs):
        if not isinstance(res, str):
            for name, values in series_from_results(res).items():
                shared[f"{sub.subquery_id}.{name}"] = values

    out = []
    for sub, res in zip(subs, segs):
        if isinstance(res, str):
            out.append(AnalysisResult(sub.subquery_id, sub.aspect, sub.text, sub.mode, error=res))
            continue
        needed = sub.program.series_refs() if sub.program else set()
        missing = sorted(n for n in needed if "." in n and n not in shared)
        if missing:
            out.append(
                AnalysisResult(sub.subquery_id, sub.aspect, sub.text, sub.mode, error=f"depends on failed sub-query series {missing}")
            )
            continue
        out.append(analyse(sub, res, frames, llm, fps=fps, other_series=shared))
    return out
