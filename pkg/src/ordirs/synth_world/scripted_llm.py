"""Rule-table language model: a pure function of the prompt.

Rules are tried in order. A rule names the schema it answers, optionally a
case-insensitive substring that must occur in the payload's query text
(``query``, ``question`` or ``text``, whichever is present) and optionally
the attempt number. It then either returns a canned ``response`` or applies
a named ``strategy``. A prompt no rule accepts raises :class:`NoRuleError`.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import yaml

from ordirs.errors import ConfigError, NoRuleError
from ordirs.llm import extract_envelope, prompt_digest

log = logging.getLogger(__name__)

STOPWORDS = frozenset(
    "a an the is are was were be been this that these those it its of in on at to for with and or "
    "does do did has have any someone something who which what there currently".split()
)
_WORD = re.compile(r"[a-z0-9]+")


def keywords(text: str) -> set[str]:
    return {w for w in _WORD.findall(text.lower()) if w not in STOPWORDS}


def keyword_sem(payload: Mapping[str, Any]) -> dict[str, Any]:
    """Yes when every content word of the question occurs in the description or label."""
    want = keywords(payload["question"])
    answers = []
    for inst in payload["instances"]:
        have = set(_WORD.findall(f"{inst.get('label', '')} {inst.get('description', '')}".lower()))
        answers.append({"instance_id": inst["instance_id"], "answer": "yes" if want <= have else "no"})
    return {"answers": answers}


def template_narrative(payload: Mapping[str, Any]) -> dict[str, Any]:
    frames = payload.get("frames", [])
    hit = [f["frame_index"] for f in frames if f.get("instances")]
    text = payload.get("text", "the sub-query")
    if not frames:
        return {"narrative": f"No frames were available for {text!r}.", "cited_frames": []}
    span = f"frames {frames[0]['frame_index']}-{frames[-1]['frame_index']}"
    if not hit:
        return {"narrative": f"No matching instances for {text!r} in {span}.", "cited_frames": []}
    labels = sorted({i["label"] for f in frames for i in f.get("instances", [])})
    cited = sorted({hit[0], hit[-1]})
    return {
        "narrative": (
            f"{text!r} matched in {len(hit)} of {len(frames)} frames ({span}); "
            f"first seen at frame {hit[0]}, last at frame {hit[-1]}; labels: {', '.join(labels)}."
        ),
        "cited_frames": cited,
    }


def template_report(payload: Mapping[str, Any]) -> dict[str, Any]:
    from ordirs.or_agent.report import templated_answer

    return {"answer": templated_answer(payload["query"], payload["results"])}


STRATEGIES: dict[str, Callable[[Mapping[str, Any]], Any]] = {
    "keywords": keyword_sem,
    "narrative": template_narrative,
    "report": template_report,
}


@dataclass(frozen=True)
class Rule:
    schema: str
    match: str | None = None
    attempt: int | None = None
    response: Any = None
    strategy: str | None = None

    def __post_init__(self) -> None:
        if (self.response is None) == (self.strategy is None):
            raise ConfigError(f"rule for {self.schema!r} needs exactly one of response or strategy")
        if self.strategy is not None and self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; known: {sorted(STRATEGIES)}")

    def accepts(self, schema: str, payload: Mapping[str, Any]) -> bool:
        if schema != self.schema:
            return False
        if self.attempt is not None and payload.get("attempt") != self.attempt:
            return False
        if self.match is not None:
            subject = next((payload[k] for k in ("query", "question", "text") if k in payload), "")
            if self.match.lower() not in str(subject).lower():
                return False
        return True

    def answer(self, payload: Mapping[str, Any]) -> str:
        if self.strategy is not None:
            return json.dumps(STRATEGIES[self.strategy](payload), ensure_ascii=False)
        if isinstance(self.response, str):
            return self.response
        return json.dumps(self.response, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Rule":
        unknown = set(data) - {"schema", "match", "attempt", "response", "strategy"}
        if unknown:
            raise ConfigError(f"unknown rule fields {sorted(unknown)}")
        return cls(
            schema=str(data["schema"]),
            match=data.get("match"),
            attempt=data.get("attempt"),
            response=data.get("response"),
            strategy=data.get("strategy"),
        )


class ScriptedLlm:
    deterministic = True

    def __init__(self, rules: Sequence[Rule], identity: str = "scripted"):
        self.rules = list(rules)
        self.identity = identity

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedLlm":
        path = Path(path)
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
        return cls([Rule.from_dict(r) for r in doc["rules"]], identity=f"scripted:{path.name}")

    @classmethod
    def default(cls) -> "ScriptedLlm":
        return cls.from_file(Path(__file__).with_name("data") / "rules.yaml")

    def complete(self, prompt: str, schema_id: str) -> str:
        schema, payload = extract_envelope(prompt)
        if schema != schema_id:
            raise NoRuleError(schema_id, prompt_digest(prompt))
        for rule in self.rules:
            if rule.accepts(schema, payload):
                return rule.answer(payload)
        raise NoRuleError(schema, prompt_digest(prompt))
