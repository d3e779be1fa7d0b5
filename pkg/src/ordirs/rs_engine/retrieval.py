"""Retrieval and synthesis stages over a single digital-twin frame."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from ordirs.dt_core import DtFrame, Instance, RleMask
from ordirs.errors import ConsistencyError, InputError, PlanError, RequirementError
from ordirs.llm import LlmClient
from ordirs.rs_engine.filters import And, Anchor, Label, Node, Not, Or, Sem, Spatial, ZoneRef, format_filter
from ordirs.rs_engine.plan import MAX_ATTEMPTS, ReasoningPlan, prompt_with_repair
from ordirs.spatial import Zone, eval_spatial_predicate, mask_union, rank_top_k

log = logging.getLogger(__name__)

# Category words a LABEL atom may use in place of a detector label.
DEFAULT_TAXONOMY: dict[str, frozenset[str]] = {
    "person": frozenset({"person", "patient", "anesthesiologist", "surgeon", "nurse", "staff"}),
    "staff": frozenset({"staff", "anesthesiologist", "surgeon", "nurse"}),
    "clinician": frozenset({"anesthesiologist", "surgeon", "nurse"}),
    "equipment": frozenset({"anesthesia machine", "operating table", "instrument tray"}),
}

SEM_INSTRUCTIONS = """\
For every listed instance, decide from its description whether the answer
to the question is yes or no. Judge each instance independently and use only
the description text.

Reply with exactly one JSON document:
{"answers": [{"instance_id": 0, "answer": "yes"}]}
"""


def _norm(text: str) -> str:
    return re.sub(r"\s+", " ", text.strip().lower())


def label_matches(query: str, label: str, taxonomy: Mapping[str, frozenset[str]] = DEFAULT_TAXONOMY) -> bool:
    q, lab = _norm(query), _norm(label)
    return lab == q or lab in taxonomy.get(q, ())


@dataclass(frozen=True)
class TraceRecord:
    atom: str
    instance_id: int
    verdict: bool
    source: str  # "llm" | "geometry" | "label"

    def to_dict(self) -> dict[str, Any]:
        return {"atom": self.atom, "instance_id": self.instance_id, "verdict": self.verdict, "source": self.source}


class FrameEvaluator:
    """Set-valued evaluation of filter trees on one frame.

    Each atom maps to the set of instance ids satisfying it; connectives are
    set operations. SEM answers are cached per question, so a question is
    put to the language model at most once per frame.
    """

    def __init__(
        self,
        frame: DtFrame,
        llm: LlmClient | None,
        *,
        zones: Mapping[str, Zone] | None = None,
        taxonomy: Mapping[str, frozenset[str]] = DEFAULT_TAXONOMY,
        attempts: int = MAX_ATTEMPTS,
    ):
        self.frame = frame
        self.llm = llm
        self.zones = dict(zones or {})
        self.taxonomy = taxonomy
        self.attempts = attempts
        self.universe = frozenset(frame.instance_ids)
        self.trace: list[TraceRecord] = []
        self._sem_cache: dict[str, frozenset[int]] = {}
        self._atom_cache: dict[Any, frozenset[int]] = {}

    def evaluate(self, node: Node) -> frozenset[int]:
        if isinstance(node, And):
            out = self.universe
            for c in node.children:
                out = out & self.evaluate(c)
            return out
        if isinstance(node, Or):
            out: frozenset[int] = frozenset()
            for c in node.children:
                out = out | self.evaluate(c)
            return out
        if isinstance(node, Not):
            return self.universe - self.evaluate(node.child)
        return self.atom(node)

    def atom(self, node: Label | Sem | Spatial) -> frozenset[int]:
        if node in self._atom_cache:
            return self._atom_cache[node]
        text = format_filter(node)
        if isinstance(node, Label):
            result = frozenset(i.instance_id for i in self.frame.instances if label_matches(node.text, i.label, self.taxonomy))
            source = "label"
        elif isinstance(node, Sem):
            result = self.sem(node.question)
            source = "llm"
        else:
            result = self.spatial(node)
            source = "geometry"
        for iid in sorted(self.universe):
            self.trace.append(TraceRecord(text, iid, iid in result, source))
        self._atom_cache[node] = result
        return result

    def anchors(self, ref: Anchor | ZoneRef | None) -> list[Instance]:
        if ref is None:
            return []
        if isinstance(ref, ZoneRef):
            try:
                zone = self.zones[ref.name]
            except KeyError:
                raise InputError(f"unknown zone {ref.name!r}") from None
            return [zone.as_instance(self.frame.width, self.frame.height, instance_id=-1)]
        ids = self.evaluate(ref.filter)
        return [i for i in self.frame.instances if i.instance_id in ids]

    def spatial(self, node: Spatial) -> frozenset[int]:
        anchors = self.anchors(node.anchor)
        pred = node.predicate
        if node.anchor is not None and not anchors:
            return frozenset()
        if pred.kind.is_ranking:
            return frozenset(rank_top_k(pred, self.frame.instances, anchors))
        hits = set()
        for inst in self.frame.instances:
            others = [a for a in anchors if a.instance_id != inst.instance_id]
            if others and eval_spatial_predicate(pred, inst, others, self.frame):
                hits.add(inst.instance_id)
        return frozenset(hits)

    def sem(self, question: str) -> frozenset[int]:
        if question in self._sem_cache:
            return self._sem_cache[question]
        if not self.frame.instances:
            return frozenset()
        if self.llm is None:
            raise RequirementError("SEM atom needs a language model")
        payload = {
            "question": question,
            "instances": [
                {"instance_id": i.instance_id, "label": i.label, "description": i.description}
                for i in self.frame.instances
            ],
        }
        expected = set(self.universe)

        def validate(doc: Any) -> frozenset[int]:
            answers = doc.get("answers") if isinstance(doc, dict) else None
            if not isinstance(answers, list):
                raise ValueError('expected {"answers": [...]}')
            seen: dict[int, bool] = {}
            for a in answers:
                iid, ans = a.get("instance_id"), str(a.get("answer", "")).strip().lower()
                if iid not in expected or iid in seen:
                    raise ValueError(f"unexpected or repeated instance_id {iid!r}")
                if ans not in ("yes", "no"):
                    raise ValueError(f"answer for {iid} must be yes or no, got {ans!r}")
                seen[iid] = ans == "yes"
            if set(seen) != expected:
                raise ValueError(f"missing answers for {sorted(expected - set(seen))}")
            return frozenset(i for i, v in seen.items() if v)

        try:
            result = prompt_with_repair(self.llm, "sem_judgment", SEM_INSTRUCTIONS, payload, validate, attempts=self.attempts)
        except PlanError as exc:
            raise RequirementError(f"SEM({question!r}) judgment failed: {exc}") from exc
        self._sem_cache[question] = result
        return result


@dataclass(frozen=True)
class Retrieval:
    per_requirement: tuple[tuple[str, frozenset[int]], ...]
    final: frozenset[int]
    trace: tuple[TraceRecord, ...] = ()

    def candidates(self) -> dict[str, list[int]]:
        return {rid: sorted(ids) for rid, ids in self.per_requirement}


def retrieve(
    plan: ReasoningPlan,
    frame: DtFrame,
    llm: LlmClient | None,
    *,
    zones: Mapping[str, Zone] | None = None,
    taxonomy: Mapping[str, frozenset[str]] = DEFAULT_TAXONOMY,
) -> Retrieval:
    """Evaluate every requirement on ``frame`` and intersect the candidate sets."""
    ev = FrameEvaluator(frame, llm, zones=zones, taxonomy=taxonomy)
    per = []
    final = ev.universe
    for req in plan.requirements:
        ids = ev.evaluate(req.filter)
        per.append((req.requirement_id, ids))
        final = final & ids
    return Retrieval(tuple(per), final, tuple(ev.trace))


@dataclass
class SegmentationResult:
    video_id: str
    frame_index: int
    candidates: dict[str, list[int]]
    final: list[int]
    mask: RleMask
    empty_flag: bool
    trace: list[TraceRecord] = field(default_factory=list)
    error: str | None = None
    elapsed_s: float = 0.0

    def to_trace_dict(self) -> dict[str, Any]:
        return {
            "video_id": self.video_id,
            "frame_index": self.frame_index,
            "candidates": self.candidates,
            "final": self.final,
            "empty": self.empty_flag,
            "mask_area": self.mask.area,
            "error": self.error,
            "records": [r.to_dict() for r in self.trace],
        }


def synthesize(candidates: Iterable[int], frame: DtFrame, retrieval: Retrieval | None = None) -> SegmentationResult:
    """Union the masks of the candidate instances."""
    ids = sorted(set(candidates))
    known = set(frame.instance_ids)
    unknown = [i for i in ids if i not in known]
    if unknown:
        raise ConsistencyError(f"candidate ids {unknown} not in frame {frame.frame_index}")
    masks = [frame.instance(i).mask for i in ids]
    mask = mask_union(masks, width=frame.width, height=frame.height)
    return SegmentationResult(
        video_id=frame.video_id,
        frame_index=frame.frame_index,
        candidates=retrieval.candidates() if retrieval else {},
        final=ids,
        mask=mask,
        empty_flag=not ids,
        trace=list(retrieval.trace) if retrieval else [],
    )


def failed_result(frame: DtFrame, error: str) -> SegmentationResult:
    return SegmentationResult(
        video_id=frame.video_id,
        frame_index=frame.frame_index,
        candidates={},
        final=[],
        mask=RleMask.empty(frame.width, frame.height),
        empty_flag=True,
        error=error,
    )
