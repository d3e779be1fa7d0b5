"""Declarative scenario files (YAML or JSON) and their validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from ordirs.errors import ScenarioError

SHAPES = ("rect", "ellipse")
QUERY_TYPES = ("semantic", "spatial", "mixed")


@dataclass(frozen=True)
class Keyframe:
    frame: int
    box: tuple[float, float, float, float]


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    label: str
    shape: str
    keyframes: tuple[Keyframe, ...]
    depth: float
    description: str
    attributes: tuple[tuple[str, str], ...] = ()
    visible_when: str | None = None
    hidden_when: str | None = None

    @property
    def full_description(self) -> str:
        """Authored text plus attributes, e.g. ``"the patient with blue gown"``."""
        if not self.attributes:
            return self.description
        attrs = ", ".join(f"{v} {k}" for k, v in self.attributes)
        return f"{self.description} with {attrs}"

    def box_at(self, t: int) -> tuple[float, float, float, float]:
        """Linear interpolation between keyframes, held constant outside them."""
        kfs = self.keyframes
        if t <= kfs[0].frame:
            return kfs[0].box
        for a, b in zip(kfs, kfs[1:]):
            if a.frame <= t <= b.frame:
                w = (t - a.frame) / (b.frame - a.frame)
                return tuple(pa + w * (pb - pa) for pa, pb in zip(a.box, b.box))  # type: ignore[return-value]
        return kfs[-1].box


@dataclass(frozen=True)
class EventSpec:
    name: str
    ranges: tuple[tuple[int, int], ...]  # inclusive

    def active(self, t: int) -> bool:
        return any(a <= t <= b for a, b in self.ranges)


@dataclass(frozen=True)
class TargetSpec:
    object: str
    frames: tuple[tuple[int, int], ...] | None = None  # None = whenever visible

    def covers(self, t: int) -> bool:
        return self.frames is None or any(a <= t <= b for a, b in self.frames)


@dataclass(frozen=True)
class QuerySpec:
    query_id: str
    text: str
    query_type: str
    targets: tuple[TargetSpec, ...]
    frames: tuple[int, int] | None = None  # inclusive sample window; None = whole video


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    width: int
    height: int
    fps: float
    duration_frames: int
    seed: int
    objects: tuple[ObjectSpec, ...]
    events: tuple[EventSpec, ...] = ()
    queries: tuple[QuerySpec, ...] = ()
    source: dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def event(self, name: str) -> EventSpec:
        for e in self.events:
            if e.name == name:
                return e
        raise ScenarioError(f"{self.name}: unknown event {name!r}")

    def object(self, name: str) -> ObjectSpec:
        for o in self.objects:
            if o.name == name:
                return o
        raise ScenarioError(f"{self.name}: unknown object {name!r}")

    def visible(self, obj: ObjectSpec, t: int) -> bool:
        if obj.visible_when and not self.event(obj.visible_when).active(t):
            return False
        if obj.hidden_when and self.event(obj.hidden_when).active(t):
            return False
        return True


def _req(data: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in data:
        raise ScenarioError(f"{where}: missing field {key!r}")
    return data[key]


def _ranges(raw: Any, where: str, duration: int) -> tuple[tuple[int, int], ...]:
    out = []
    for r in raw:
        if not (isinstance(r, (list, tuple)) and len(r) == 2):
            raise ScenarioError(f"{where}: frame range must be [start, end], got {r!r}")
        a, b = int(r[0]), int(r[1])
        if not 0 <= a <= b < duration:
            raise ScenarioError(f"{where}: frame range [{a}, {b}] outside 0..{duration - 1}")
        out.append((a, b))
    return tuple(out)


def _object(raw: Mapping[str, Any], width: int, height: int, duration: int, scen: str) -> ObjectSpec:
    name = str(_req(raw, "name", f"{scen}: object"))
    where = f"{scen}: object {name!r}"
    shape = raw.get("shape", "rect")
    if shape not in SHAPES:
        raise ScenarioError(f"{where}: shape must be one of {SHAPES}, got {shape!r}")
    depth = float(_req(raw, "depth", where))
    if not 0.0 <= depth <= 1.0:
        raise ScenarioError(f"{where}: depth {depth} outside [0, 1]")
    raw_kfs = raw.get("keyframes")
    if raw_kfs is None and "box" in raw:
        raw_kfs = [{"frame": 0, "box": raw["box"]}]
    if not raw_kfs:
        raise ScenarioError(f"{where}: needs a box or keyframes")
    kfs = []
    for k in raw_kfs:
        frame = int(k.get("frame", 0))
        box = tuple(float(v) for v in _req(k, "box", where))
        if len(box) != 4:
            raise ScenarioError(f"{where}: box must have 4 numbers")
        x0, y0, x1, y1 = box
        if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
            raise ScenarioError(f"{where}: box {list(box)} at frame {frame} leaves the {width}x{height} frame")
        if not 0 <= frame < duration:
            raise ScenarioError(f"{where}: keyframe {frame} outside 0..{duration - 1}")
        kfs.append(Keyframe(frame, box))  # type: ignore[arg-type]
    frames = [k.frame for k in kfs]
    if frames != sorted(set(frames)):
        raise ScenarioError(f"{where}: keyframes must be strictly increasing")
    attrs = raw.get("attributes") or {}
    if not isinstance(attrs, Mapping):
        raise ScenarioError(f"{where}: attributes must be a mapping")
    return ObjectSpec(
        name=name,
        label=str(_req(raw, "label", where)),
        shape=shape,
        keyframes=tuple(kfs),
        depth=depth,
        description=str(raw.get("description", "")) or f"a {raw['label']}",
        attributes=tuple(sorted((str(k), str(v)) for k, v in attrs.items())),
        visible_when=raw.get("visible_when"),
        hidden_when=raw.get("hidden_when"),
    )


def scenario_from_dict(data: Mapping[str, Any]) -> ScenarioSpec:
    name = str(_req(data, "name", "scenario"))
    dims = _req(data, "dimensions", name)
    width, height = int(dims[0]), int(dims[1])
    if width < 1 or height < 1:
        raise ScenarioError(f"{name}: dimensions must be positive")
    duration = int(_req(data, "duration_frames", name))
    if duration < 1:
        raise ScenarioError(f"{name}: duration_frames must be >= 1")
    fps = float(data.get("fps", 1.0))
    if fps <= 0:
        raise ScenarioError(f"{name}: fps must be positive")
    objects = tuple(_object(o, width, height, duration, name) for o in _req(data, "objects", name))
    names = [o.name for o in objects]
    if len(set(names)) != len(names):
        raise ScenarioError(f"{name}: object names must be unique")
    events = tuple(
        EventSpec(str(_req(e, "name", f"{name}: event")), _ranges(e.get("frames", []), f"{name}: event {e.get('name')!r}", duration))
        for e in data.get("events") or []
    )
    event_names = {e.name for e in events}
    for o in objects:
        for ref in (o.visible_when, o.hidden_when):
            if ref is not None and ref not in event_names:
                raise ScenarioError(f"{name}: object {o.name!r} refers to unknown event {ref!r}")
    queries = []
    for q in data.get("queries") or []:
        qid = str(_req(q, "id", f"{name}: query"))
        where = f"{name}: query {qid!r}"
        qtype = _req(q, "type", where)
        if qtype not in QUERY_TYPES:
            raise ScenarioError(f"{where}: type must be one of {QUERY_TYPES}")
        targets = []
        for t in _req(q, "targets", where):
            if isinstance(t, str):
                t = {"object": t}
            if t["object"] not in names:
                raise ScenarioError(f"{where}: unknown target object {t['object']!r}")
            fr = t.get("frames")
            targets.append(TargetSpec(t["object"], None if fr is None else _ranges(fr, where, duration)))
        window = q.get("frames")
        if window is not None:
            window = _ranges([window], where, duration)[0]
        queries.append(QuerySpec(qid, str(_req(q, "text", where)), qtype, tuple(targets), window))
    return ScenarioSpec(
        name=name,
        width=width,
        height=height,
        fps=fps,
        duration_frames=duration,
        seed=int(data.get("seed", 0)),
        objects=objects,
        events=events,
        queries=tuple(queries),
        source=dict(data),
    )


def parse_scenarios(doc: Any) -> list[ScenarioSpec]:
    """A document holds one scenario or ``{"scenarios": [...]}``."""
    if isinstance(doc, Mapping) and "scenarios" in doc:
        items = doc["scenarios"]
    elif isinstance(doc, list):
        items = doc
    else:
        items = [doc]
    if not items or not all(isinstance(i, Mapping) for i in items):
        raise ScenarioError("scenario document must contain at least one scenario object")
    specs = [scenario_from_dict(i) for i in items]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ScenarioError(f"scenario names must be unique: {names}")
    return specs


def load_scenarios(path: str | Path) -> list[ScenarioSpec]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return parse_scenarios(doc)


def bundled_path(name: str = "default.yaml") -> Path:
    return Path(__file__).with_name("data") / name
