"""Digital-twin data model: one structured record per video frame."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

from ordirs.dt_core.rle import RleMask

SIGNIFICANT_DIGITS = 6


def canonical_float(value: Any) -> Any:
    """Round a real number to 6 significant digits; pass anything else through.

    Stored values are always the canonical ones, so a JSON round trip through
    ``repr`` is bit-exact.
    """
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return value
    return float(f"{float(value):.{SIGNIFICANT_DIGITS}g}")


def _canon(obj: Any, *names: str) -> None:
    for name in names:
        object.__setattr__(obj, name, canonical_float(getattr(obj, name)))


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        _canon(self, "x_min", "y_min", "x_max", "y_max")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_list(cls, values: Any) -> "BBox":
        x0, y0, x1, y1 = values
        return cls(x0, y0, x1, y1)

    def iou(self, other: "BBox") -> float:
        ix = max(0.0, min(self.x_max, other.x_max) - max(self.x_min, other.x_min))
        iy = max(0.0, min(self.y_max, other.y_max) - max(self.y_min, other.y_min))
        inter = ix * iy
        union = self.area + other.area - inter
        return inter / union if union > 0 else 0.0

    def pixel_window(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Integer ``(col0, row0, col1, row1)`` of pixels the box overlaps, clipped to the frame."""
        c0 = max(0, math.floor(self.x_min))
        r0 = max(0, math.floor(self.y_min))
        c1 = min(width, math.ceil(self.x_max))
        r1 = min(height, math.ceil(self.y_max))
        return c0, r0, c1, r1


@dataclass(frozen=True)
class DepthStats:
    mean: float
    std: float
    pixel_count: int

    def __post_init__(self) -> None:
        _canon(self, "mean", "std")

    def to_dict(self) -> dict[str, Any]:
        return {"mean": self.mean, "std": self.std, "pixel_count": self.pixel_count}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DepthStats":
        return cls(mean=data["mean"], std=data["std"], pixel_count=data["pixel_count"])


@dataclass(frozen=True)
class Instance:
    instance_id: int
    label: str
    bbox: BBox
    det_confidence: float
    mask: RleMask
    mask_confidence: float
    description: str = ""
    depth: DepthStats | None = None

    def __post_init__(self) -> None:
        _canon(self, "det_confidence", "mask_confidence")

    def to_dict(self) -> dict[str, Any]:
        return {
            "instance_id": self.instance_id,
            "label": self.label,
            "bbox": self.bbox.as_list(),
            "det_confidence": self.det_confidence,
            "mask": self.mask.to_dict(),
            "mask_confidence": self.mask_confidence,
            "description": self.description,
            "depth": None if self.depth is None else self.depth.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Instance":
        depth = data.get("depth")
        return cls(
            instance_id=data["instance_id"],
            label=data["label"],
            bbox=BBox.from_list(data["bbox"]),
            det_confidence=data["det_confidence"],
            mask=RleMask.from_dict(data["mask"]),
            mask_confidence=data["mask_confidence"],
            description=data.get("description", ""),
            depth=None if depth is None else DepthStats.from_dict(depth),
        )


@dataclass(frozen=True)
class DtFrame:
    video_id: str
    frame_index: int
    timestamp_ms: float
    width: int
    height: int
    instances: tuple[Instance, ...] = ()
    depth_map_ref: str | None = None
    producer: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.instances, tuple):
            object.__setattr__(self, "instances", tuple(self.instances))
        _canon(self, "timestamp_ms")

    def instance(self, instance_id: int) -> Instance:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise KeyError(instance_id)

    @property
    def instance_ids(self) -> list[int]:
        return [inst.instance_id for inst in self.instances]

    def to_dict(self) -> dict[str, Any]:
        return {
            "video_id": self.video_id,
            "frame_index": self.frame_index,
            "timestamp_ms": self.timestamp_ms,
            "width": self.width,
            "height": self.height,
            "instances": [inst.to_dict() for inst in self.instances],
            "depth_map_ref": self.depth_map_ref,
            "producer": dict(sorted(self.producer.items())),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DtFrame":
        return cls(
            video_id=data["video_id"],
            frame_index=data["frame_index"],
            timestamp_ms=data["timestamp_ms"],
            width=data["width"],
            height=data["height"],
            instances=tuple(Instance.from_dict(i) for i in data["instances"]),
            depth_map_ref=data.get("depth_map_ref"),
            producer=dict(data.get("producer") or {}),
        )


def instance_sort_key(inst: Instance) -> tuple:
    """Normative ordering: confidence descending, then x_min, y_min, instance_id."""
    return (-inst.det_confidence, inst.bbox.x_min, inst.bbox.y_min, inst.instance_id)
