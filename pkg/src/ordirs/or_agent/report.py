"""Final answer composition and report rendering."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from ordirs.errors import InputError, OrdirsError
from ordirs.llm import LlmClient
from ordirs.or_agent.agent import AnalysisResult, SubQuery
from ordirs.rs_engine.plan import MAX_ATTEMPTS, prompt_with_repair

log = logging.getLogger(__name__)

REPORT_INSTRUCTIONS = """\
You are given the original workflow question and the analysis results of
each segmentation sub-query (metrics in frames and seconds, key frames,
narratives, errors). Write a concise answer to the question. Mention every
aspect by name, cite key frames as "<aspect> (Frame N)", and state plainly
when an aspect could not be analysed.

Reply with exactly one JSON document:
{"answer": "..."}
"""


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4g}"
    if isinstance(value, list):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    return "none" if value is None else str(value)


def templated_answer(query: str, results: Sequence[Mapping[str, Any]]) -> str:
    """Deterministic summary used when no language model answer is available."""
    lines = [f"Findings for: {query}"]
    for r in results:
        aspect = r["aspect"]
        if r.get("error"):
            lines.append(f"- {aspect}: could not be analysed ({r['error']}).")
            continue
        parts = []
        if r.get("metrics"):
            parts.append("; ".join(f"{k} = {_fmt(v)}" for k, v in r["metrics"].items()))
        if r.get("narrative"):
            parts.append(r["narrative"])
        if not parts:
            parts.append("no findings")
        evidence = ", ".join(f"{aspect} (Frame {f})" for f in r.get("key_frames", []))
        lines.append(f"- {aspect}: {' '.join(parts)}" + (f" Evidence: {evidence}." if evidence else ""))
    return "\n".join(lines)


@dataclass
class AgentReport:
    query: str
    subqueries: list[SubQuery]
    results: list[AnalysisResult]
    answer: str
    answer_source: str  # "llm" or "template"
    transcripts: list[dict[str, Any]] = field(default_factory=list, repr=False)

    def evidence_gallery(self) -> dict[int, list[str]]:
        gallery: dict[int, list[str]] = {}
        for r in self.results:
            for f in r.key_frames:
                ref = r.evidence.get(f)
                if ref:
                    gallery.setdefault(f, []).append(ref)
        return dict(sorted(gallery.items()))

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "subqueries": [s.to_dict() for s in self.subqueries],
            "results": [r.to_dict() for r in self.results],
            "answer": self.answer,
            "answer_source": self.answer_source,
            "evidence": {str(k): v for k, v in self.evidence_gallery().items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def to_markdown(self) -> str:
        out = [f"# Workflow analysis", "", f"**Question:** {self.query}", "", "## Answer", "", self.answer, ""]
        out += ["## Sub-queries", ""]
        for sub, res in zip(self.subqueries, self.results):
            out += [f"### {sub.subquery_id}: {sub.aspect}", "", f"- Segment: {sub.text}", f"- Mode: {sub.mode}"]
            if sub.program is not None:
                out += ["", "```", sub.program.text.strip(), "```", ""]
            if res.error:
                out.append(f"- Error: {res.error}")
            for k, v in res.metrics.items():
                out.append(f"- {k}: {_fmt(v)}")
            if res.narrative:
                out += ["", res.narrative]
            if res.key_frames:
                out += ["", "Evidence:", ""]
                for f in res.key_frames:
                    ref = res.evidence.get(f)
                    label = f"{res.aspect} (Frame {f})"
                    out.append(f"- ![{label}]({ref})" if ref else f"- {label}")
            out.append("")
        return "\n".join(out).rstrip() + "\n"


def compose_report(
    query: str,
    subqueries: Sequence[SubQuery],
    results: Sequence[AnalysisResult],
    llm: LlmClient | None,
    *,
    attempts: int = MAX_ATTEMPTS,
) -> AgentReport:
    """Ask the model for the final answer; fall back to the template on any failure."""
    if not results:
        raise InputError("need at least one analysis result")
    payload_results = [r.to_dict() for r in results]
    for r in payload_results:
        r.pop("evidence", None)
    transcripts: list[dict[str, Any]] = []
    aspects = [r.aspect for r in results]

    def validate(doc: Any) -> str:
        answer = doc.get("answer") if isinstance(doc, dict) else None
        if not isinstance(answer, str) or not answer.strip():
            raise ValueError('expected {"answer": "..."} with non-empty text')
        missing = [a for a in aspects if a.lower() not in answer.lower()]
        if missing:
            raise ValueError(f"answer does not mention aspects {missing}")
        return answer.strip()

    if llm is not None:
        try:
            answer = prompt_with_repair(
                llm,
                "report",
                REPORT_INSTRUCTIONS,
                {"query": query, "results": payload_results},
                validate,
                attempts=attempts,
                transcripts=transcripts,
            )
            return AgentReport(query, list(subqueries), list(results), answer, "llm", transcripts)
        except OrdirsError as exc:
            log.warning("report composition failed, using template: %s", exc)
    answer = templated_answer(query, payload_results)
    return AgentReport(query, list(subqueries), list(results), answer, "template", transcripts)
