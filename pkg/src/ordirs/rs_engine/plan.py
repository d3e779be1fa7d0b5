"""Reasoning stage: implicit query -> validated list of atomic requirements."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence, TypeVar

from ordirs.errors import FilterSyntaxError, InputError, PlanError
from ordirs.llm import LlmClient, parse_json_response, render_prompt
from ordirs.rs_engine.filters import Label, Node, Sem, Spatial, format_filter, parse_filter, top_level_atoms

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
KINDS = ("semantic", "spatial")

PLAN_INSTRUCTIONS = """\
You segment objects in an operating-room scene described by a structured
digital twin. Each instance has a label, a natural-language description,
a mask and depth statistics (0 = nearest to the camera, 1 = farthest).

Think step by step about what the implicit query is asking for: which kind
of object is meant, which attributes it must have, and where it must be
relative to other objects. Then write down each condition as a separate
atomic requirement. A target instance must satisfy every requirement.

Each requirement has a kind ("semantic" for label/attribute conditions,
"spatial" for position/depth conditions) and a filter in this language:

  LABEL("operating table")           instance label (or a category such as "person", "staff")
  SEM("wearing a blue gown")         yes/no question about the instance description
  LEFT_OF / RIGHT_OF / ABOVE / BELOW (ANCHOR(filter))
  NEARER_THAN / FARTHER_THAN (ANCHOR(filter))       compare mean depth
  WITHIN_PX(radius, ANCHOR(filter))  centroid distance in pixels
  OVERLAPS([tau,] ANCHOR(filter))    mask IoU above tau (default 0)
  NEAREST_K(k [, ANCHOR(filter)])    k closest (to the anchor, else to the camera)
  FARTHEST_K(k [, ANCHOR(filter)])   k farthest
  LARGEST_K(k)                       k largest masks
  combine with AND, OR, NOT and parentheses; ZONE("name") may replace ANCHOR(...)

Reply with exactly one JSON document:
{"requirements": [{"id": "r1", "kind": "semantic", "rationale": "...", "filter": "..."}]}
"""


@dataclass(frozen=True)
class Requirement:
    requirement_id: str
    kind: str
    rationale: str
    filter: Node

    @property
    def filter_text(self) -> str:
        return format_filter(self.filter)

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.requirement_id, "kind": self.kind, "rationale": self.rationale, "filter": self.filter_text}


@dataclass(frozen=True)
class ReasoningPlan:
    query: str
    requirements: tuple[Requirement, ...]
    transcripts: tuple[dict[str, Any], ...] = field(default=(), compare=False)

    @property
    def k(self) -> int:
        return len(self.requirements)

    def to_dict(self, with_transcripts: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {"query": self.query, "requirements": [r.to_dict() for r in self.requirements]}
        if with_transcripts:
            out["transcripts"] = list(self.transcripts)
        return out


def check_requirement_kind(kind: str, node: Node) -> None:
    atoms = list(top_level_atoms(node))
    if kind == "semantic" and not any(isinstance(a, (Label, Sem)) for a in atoms):
        raise ValueError("a semantic requirement needs at least one LABEL or SEM atom")
    if kind == "spatial" and not any(isinstance(a, Spatial) for a in atoms):
        raise ValueError("a spatial requirement needs at least one spatial predicate")


def requirement_from_dict(item: Any, index: int) -> Requirement:
    if not isinstance(item, dict):
        raise ValueError(f"requirement {index} is not an object")
    rid = item.get("id")
    if rid is None or str(rid).strip() == "":
        raise ValueError(f"requirement {index} has no id")
    kind = item.get("kind")
    if kind not in KINDS:
        raise ValueError(f"requirement {rid}: kind must be one of {KINDS}, got {kind!r}")
    text = item.get("filter")
    if not isinstance(text, str):
        raise ValueError(f"requirement {rid}: filter must be a string")
    try:
        node = parse_filter(text)
    except FilterSyntaxError as exc:
        raise ValueError(f"requirement {rid}: {exc}") from None
    check_requirement_kind(kind, node)
    return Requirement(str(rid), kind, str(item.get("rationale", "")), node)


def plan_from_document(query: str, doc: Any) -> ReasoningPlan:
    if not isinstance(doc, dict) or not isinstance(doc.get("requirements"), list):
        raise ValueError('expected an object with a "requirements" list')
    reqs = [requirement_from_dict(item, i) for i, item in enumerate(doc["requirements"])]
    if not reqs:
        raise ValueError("at least one requirement is needed")
    ids = [r.requirement_id for r in reqs]
    if len(set(ids)) != len(ids):
        raise ValueError(f"requirement ids are not unique: {ids}")
    return ReasoningPlan(query, tuple(reqs))


T = TypeVar("T")


def prompt_with_repair(
    llm: LlmClient,
    schema_id: str,
    instructions: str,
    payload: dict[str, Any],
    validate: Callable[[Any], T],
    *,
    attempts: int = MAX_ATTEMPTS,
    transcripts: list[dict[str, Any]] | None = None,
) -> T:
    """Ask for a JSON document, feeding validation errors back on failure.

    Every exchange is appended to ``transcripts``. After ``attempts``
    failures a :class:`PlanError` carrying all transcripts is raised.
    """
    transcripts = [] if transcripts is None else transcripts
    feedback: dict[str, Any] = {}
    for attempt in range(1, attempts + 1):
        prompt = render_prompt(instructions, schema_id, {**payload, "attempt": attempt, **feedback})
        response = llm.complete(prompt, schema_id)
        record = {"schema": schema_id, "attempt": attempt, "prompt": prompt, "response": response, "error": None}
        transcripts.append(record)
        try:
            return validate(parse_json_response(response))
        except (ValueError, TypeError, KeyError) as exc:
            record["error"] = str(exc)
            log.info("%s attempt %d rejected: %s", schema_id, attempt, exc)
            feedback = {"previous_response": response, "validation_error": str(exc)}
    raise PlanError(f"{schema_id}: no valid response after {attempts} attempts", transcripts)


def decompose_query(query: str, llm: LlmClient, *, attempts: int = MAX_ATTEMPTS) -> ReasoningPlan:
    """Turn an implicit query into explicit requirements via the language model."""
    if not query or not query.strip():
        raise InputError("query must not be empty")
    transcripts: list[dict[str, Any]] = []
    plan = prompt_with_repair(
        llm,
        "plan",
        PLAN_INSTRUCTIONS,
        {"query": query},
        lambda doc: plan_from_document(query, doc),
        attempts=attempts,
        transcripts=transcripts,
    )
    return ReasoningPlan(plan.query, plan.requirements, tuple(transcripts))


def plan_from_filters(query: str, filters: Sequence[tuple[str, str]]) -> ReasoningPlan:
    """Build a plan directly from ``(kind, filter text)`` pairs, ids r1..rK."""
    reqs = []
    for i, (kind, text) in enumerate(filters, start=1):
        node = parse_filter(text)
        check_requirement_kind(kind, node)
        reqs.append(Requirement(f"r{i}", kind, "", node))
    return ReasoningPlan(query, tuple(reqs))
