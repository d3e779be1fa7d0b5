"""Backend contract and pipeline configuration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from ordirs.dt_core import BBox, RleMask
from ordirs.errors import ConfigError

CAPABILITIES = ("detect", "segment", "caption", "depth")

DEFAULT_LEXICON = (
    "patient",
    "anesthesiologist",
    "surgeon",
    "nurse",
    "anesthesia machine",
    "operating table",
    "door",
    "instrument tray",
)


@dataclass(frozen=True)
class Detection:
    label: str
    bbox: BBox
    score: float


@runtime_checkable
class PerceptionBackend(Protocol):
    identity: str

    def producer(self) -> dict[str, str]:
        """Backend name -> model identifier for each capability."""

    def detect(self, image: np.ndarray, lexicon: Sequence[str]) -> list[Detection]: ...

    def segment_box(self, image: np.ndarray, bbox: BBox) -> tuple[RleMask, float]: ...

    def describe_region(self, image: np.ndarray, bbox: BBox) -> str: ...

    def estimate_depth(self, image: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class PipelineConfig:
    lexicon: tuple[str, ...] = DEFAULT_LEXICON
    det_threshold: float = 0.30
    max_instances: int = 32
    enable_depth: bool = True
    enable_captions: bool = True
    dedup_iou: float = 0.9
    endpoints: Mapping[str, str] = field(default_factory=dict)
    timeouts: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "lexicon", tuple(self.lexicon))
        if not self.lexicon:
            raise ConfigError("lexicon must not be empty")
        if not 0.0 <= self.det_threshold <= 1.0:
            raise ConfigError(f"det_threshold must lie in [0, 1], got {self.det_threshold}")
        if not isinstance(self.max_instances, int) or self.max_instances < 1:
            raise ConfigError(f"max_instances must be >= 1, got {self.max_instances}")
        unknown = set(self.endpoints) - set(CAPABILITIES)
        if unknown:
            raise ConfigError(f"unknown capability endpoints: {sorted(unknown)}")
