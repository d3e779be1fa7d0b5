"""Row-major, background-first run-length codec for binary masks."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Any, Sequence

import numpy as np

from ordirs.errors import CorruptMaskError, InputError


@dataclass(frozen=True)
class RleMask:
    """Binary mask stored as alternating run lengths.

    ``runs[0]`` counts background pixels, ``runs[1]`` foreground, and so on,
    scanning rows top to bottom and each row left to right. Only the first
    run may be zero (a mask whose first pixel is foreground).
    """

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.runs, tuple):
            object.__setattr__(self, "runs", tuple(self.runs))

    @cached_property
    def area(self) -> int:
        return int(sum(self.runs[1::2]))

    @property
    def size(self) -> int:
        return self.width * self.height

    def intervals(self) -> np.ndarray:
        """Foreground runs as an ``(n, 2)`` array of ``[start, end)`` flat offsets."""
        return _intervals(self.runs)

    def to_dict(self) -> dict[str, Any]:
        return {"width": self.width, "height": self.height, "runs": list(self.runs)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RleMask":
        return cls(width=data["width"], height=data["height"], runs=tuple(data["runs"]))

    @classmethod
    def empty(cls, width: int, height: int) -> "RleMask":
        return cls(width, height, (width * height,))

    @classmethod
    def from_intervals(cls, width: int, height: int, intervals: np.ndarray) -> "RleMask":
        """Build a mask from sorted, non-overlapping, non-adjacent ``[start, end)`` runs."""
        runs: list[int] = []
        cursor = 0
        for start, end in np.asarray(intervals, dtype=np.int64).reshape(-1, 2):
            runs.append(int(start - cursor))
            runs.append(int(end - start))
            cursor = int(end)
        total = width * height
        if cursor < total or not runs:
            runs.append(total - cursor)
        return cls(width, height, tuple(runs))


def _intervals(runs: Sequence[int]) -> np.ndarray:
    if len(runs) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    ends = np.cumsum(np.asarray(runs, dtype=np.int64))
    fg = np.arange(1, len(runs), 2)
    out = np.stack([ends[fg - 1], ends[fg]], axis=1)
    return out[out[:, 1] > out[:, 0]]


def _as_grid(bitmap: Any) -> np.ndarray:
    if isinstance(bitmap, np.ndarray):
        grid = bitmap
    else:
        rows = list(bitmap)
        if not rows:
            raise InputError("bitmap is empty")
        lengths = {len(r) for r in rows}
        if len(lengths) != 1:
            raise InputError(f"bitmap is ragged: row lengths {sorted(lengths)}")
        grid = np.asarray(rows)
    if grid.ndim != 2 or grid.shape[0] == 0 or grid.shape[1] == 0:
        raise InputError(f"bitmap must be a non-empty 2-D grid, got shape {grid.shape}")
    return grid


def encode_rle(bitmap: Any) -> RleMask:
    """Encode a rectangular grid (nonzero = foreground) as an :class:`RleMask`."""
    grid = _as_grid(bitmap)
    height, width = grid.shape
    flat = grid.astype(bool).ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RleMask(int(width), int(height), tuple(int(r) for r in runs))


def decode_rle(mask: RleMask) -> np.ndarray:
    """Expand ``mask`` to a ``(height, width)`` uint8 grid of 0/1."""
    check_runs(mask)
    values = np.zeros(len(mask.runs), dtype=np.uint8)
    values[1::2] = 1
    flat = np.repeat(values, np.asarray(mask.runs, dtype=np.int64))
    return flat.reshape(mask.height, mask.width)


def check_runs(mask: RleMask) -> None:
    if mask.width <= 0 or mask.height <= 0:
        raise CorruptMaskError(f"mask dimensions must be positive, got {mask.width}x{mask.height}")
    if any(r < 0 for r in mask.runs):
        raise CorruptMaskError("negative run length")
    total = sum(mask.runs)
    if total != mask.width * mask.height:
        raise CorruptMaskError(
            f"run sum {total} does not match {mask.width}x{mask.height}={mask.width * mask.height}"
        )
