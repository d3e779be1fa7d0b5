"""Mask algebra and the closed catalog of spatial predicates.

Everything here operates on run-length intervals directly; no mask is ever
expanded to a full bitmap except in :func:`depth_stats_for_mask`, which has
to index the depth map anyway.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ordirs.dt_core import BBox, DepthStats, DtFrame, Instance, RleMask
from ordirs.errors import CapabilityMissingError, EmptyMaskError, InputError


def _same_dims(masks: Sequence[RleMask]) -> tuple[int, int]:
    dims = {(m.width, m.height) for m in masks}
    if len(dims) != 1:
        raise InputError(f"mask dimension mismatch: {sorted(dims)}")
    return next(iter(dims))


def intersection_area(a: RleMask, b: RleMask) -> int:
    _same_dims([a, b])
    ia, ib = a.intervals(), b.intervals()
    i = j = 0
    total = 0
    while i < len(ia) and j < len(ib):
        lo = max(ia[i, 0], ib[j, 0])
        hi = min(ia[i, 1], ib[j, 1])
        if hi > lo:
            total += int(hi - lo)
        if ia[i, 1] < ib[j, 1]:
            i += 1
        else:
            j += 1
    return total


def mask_iou(a: RleMask, b: RleMask) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union == 0:
        return 1.0
    return inter / union


def _merge(intervals: np.ndarray) -> np.ndarray:
    if len(intervals) == 0:
        return intervals.reshape(0, 2)
    iv = intervals[np.argsort(intervals[:, 0], kind="stable")]
    reach = np.maximum.accumulate(iv[:, 1])
    # a new group starts where the interval begins past everything seen so far
    starts = np.ones(len(iv), dtype=bool)
    starts[1:] = iv[1:, 0] > reach[:-1]
    group = np.cumsum(starts) - 1
    out = np.empty((int(group[-1]) + 1, 2), dtype=np.int64)
    out[:, 0] = iv[starts, 0]
    ends = np.zeros(len(out), dtype=np.int64)
    np.maximum.at(ends, group, iv[:, 1])
    out[:, 1] = ends
    return out


def mask_union(masks: Iterable[RleMask], width: int | None = None, height: int | None = None) -> RleMask:
    """Pixel-wise OR. An empty input needs explicit ``width``/``height``."""
    masks = list(masks)
    if not masks:
        if width is None or height is None:
            raise InputError("empty union needs explicit dimensions")
        return RleMask.empty(width, height)
    w, h = _same_dims(masks)
    if width is not None and height is not None and (w, h) != (width, height):
        raise InputError(f"masks are {w}x{h}, expected {width}x{height}")
    merged = _merge(np.concatenate([m.intervals() for m in masks]))
    return RleMask.from_intervals(w, h, merged)


def centroid(mask: RleMask) -> tuple[float, float]:
    """Mean of member pixel centers; pixel (row i, col j) sits at (j + 0.5, i + 0.5)."""
    if mask.area == 0:
        raise EmptyMaskError("centroid of an empty mask")
    w = mask.width
    sx = sy = 0.0
    n = 0
    for start, end in mask.intervals():
        start, end = int(start), int(end)
        for r in range(start // w, (end - 1) // w + 1):
            cs = max(start, r * w) - r * w
            ce = min(end, (r + 1) * w) - r * w
            k = ce - cs
            sx += k * (cs + ce) / 2.0
            sy += k * (r + 0.5)
            n += k
    return sx / n, sy / n


def mask_indices(mask: RleMask) -> np.ndarray:
    iv = mask.intervals()
    if len(iv) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([np.arange(s, e, dtype=np.int64) for s, e in iv])


def depth_stats_for_mask(depth_map: np.ndarray, mask: RleMask) -> DepthStats:
    """Mean and population std of the depth map over exactly the mask pixels."""
    depth_map = np.asarray(depth_map, dtype=np.float64)
    if depth_map.shape != (mask.height, mask.width):
        raise InputError(f"depth map {depth_map.shape} does not match mask {mask.height}x{mask.width}")
    if mask.area == 0:
        raise EmptyMaskError("depth statistics of an empty mask")
    values = depth_map.ravel()[mask_indices(mask)]
    # a constant region must report std 0, not rounding residue
    std = 0.0 if values.min() == values.max() else float(values.std(ddof=0))
    return DepthStats(mean=float(values.mean()), std=std, pixel_count=int(values.size))


def bbox_of_mask(mask: RleMask) -> BBox:
    if mask.area == 0:
        raise EmptyMaskError("bounding box of an empty mask")
    w = mask.width
    rows: list[int] = []
    cols_lo = w
    cols_hi = 0
    for start, end in mask.intervals():
        start, end = int(start), int(end)
        r0, r1 = start // w, (end - 1) // w
        rows += [r0, r1]
        if r0 != r1:
            cols_lo, cols_hi = 0, w
        else:
            cols_lo = min(cols_lo, start - r0 * w)
            cols_hi = max(cols_hi, end - r0 * w)
    return BBox(cols_lo, min(rows), cols_hi, max(rows) + 1)


class PredicateKind(str, enum.Enum):
    LEFT_OF = "LEFT_OF"
    RIGHT_OF = "RIGHT_OF"
    ABOVE = "ABOVE"
    BELOW = "BELOW"
    NEARER_THAN = "NEARER_THAN"
    FARTHER_THAN = "FARTHER_THAN"
    WITHIN_PX = "WITHIN_PX"
    OVERLAPS = "OVERLAPS"
    NEAREST_K = "NEAREST_K"
    FARTHEST_K = "FARTHEST_K"
    LARGEST_K = "LARGEST_K"

    @property
    def is_ranking(self) -> bool:
        return self in (PredicateKind.NEAREST_K, PredicateKind.FARTHEST_K, PredicateKind.LARGEST_K)

    @property
    def uses_depth(self) -> bool:
        return self in (PredicateKind.NEARER_THAN, PredicateKind.FARTHER_THAN)


@dataclass(frozen=True)
class SpatialPredicate:
    kind: PredicateKind
    radius: float | None = None
    tau: float | None = None
    k: int | None = None

    def __post_init__(self) -> None:
        kind = PredicateKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is PredicateKind.WITHIN_PX and not (self.radius is not None and self.radius > 0):
            raise InputError(f"WITHIN_PX radius must be > 0, got {self.radius!r}")
        if self.tau is not None and not 0.0 <= self.tau <= 1.0:
            raise InputError(f"OVERLAPS threshold must lie in [0, 1], got {self.tau!r}")
        if kind.is_ranking and not (isinstance(self.k, int) and self.k >= 1):
            raise InputError(f"{kind.value} needs integer k >= 1, got {self.k!r}")

    @property
    def threshold(self) -> float:
        return 0.0 if self.tau is None else self.tau


@dataclass(frozen=True)
class Zone:
    """Named polygon in pixel coordinates, usable wherever an anchor set is."""

    name: str
    points: tuple[tuple[float, float], ...]

    def rasterize(self, width: int, height: int) -> RleMask:
        xs = np.arange(width) + 0.5
        ys = np.arange(height) + 0.5
        px, py = np.meshgrid(xs, ys)
        inside = np.zeros((height, width), dtype=bool)
        pts = list(self.points)
        for (x1, y1), (x2, y2) in zip(pts, pts[1:] + pts[:1]):
            if y1 == y2:
                continue
            crosses = (py >= min(y1, y2)) & (py < max(y1, y2))
            xcross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (px < xcross)
        from ordirs.dt_core import encode_rle

        return encode_rle(inside)

    def as_instance(self, width: int, height: int, instance_id: int = -1) -> Instance:
        mask = self.rasterize(width, height)
        if mask.area == 0:
            raise InputError(f"zone {self.name!r} covers no pixels")
        return Instance(
            instance_id=instance_id,
            label=f"zone:{self.name}",
            bbox=bbox_of_mask(mask),
            det_confidence=1.0,
            mask=mask,
            mask_confidence=1.0,
        )


def _aggregate_depth(anchors: Sequence[Instance]) -> float:
    total = 0.0
    count = 0
    for a in anchors:
        if a.depth is None:
            raise CapabilityMissingError(f"anchor {a.instance_id} has no depth statistics")
        total += a.depth.mean * a.depth.pixel_count
        count += a.depth.pixel_count
    return total / count


def _subject_depth(subject: Instance) -> float:
    if subject.depth is None:
        raise CapabilityMissingError(f"instance {subject.instance_id} has no depth statistics")
    return subject.depth.mean


def anchor_distance(subject: Instance, anchors: Sequence[Instance]) -> float:
    sx, sy = centroid(subject.mask)
    return min(math.hypot(sx - ax, sy - ay) for ax, ay in (centroid(a.mask) for a in anchors))


def rank_key(pred: SpatialPredicate, inst: Instance, anchors: Sequence[Instance]) -> tuple:
    kind = pred.kind
    if kind is PredicateKind.LARGEST_K:
        return (-inst.mask.area, inst.instance_id)
    if anchors:
        d = anchor_distance(inst, anchors)
        return (d if kind is PredicateKind.NEAREST_K else -d, inst.instance_id)
    depth = _subject_depth(inst)
    return (depth if kind is PredicateKind.NEAREST_K else -depth, inst.instance_id)


def rank_top_k(pred: SpatialPredicate, population: Sequence[Instance], anchors: Sequence[Instance] = ()) -> set[int]:
    """Instance ids of the top-k of ``population`` under a ranking predicate.

    Anchor members never compete. With anchors, NEAREST/FARTHEST rank by
    centroid distance to the closest anchor; without, by mean depth.
    """
    if not pred.kind.is_ranking:
        raise InputError(f"{pred.kind.value} is not a ranking predicate")
    anchor_ids = {a.instance_id for a in anchors}
    pool = [i for i in population if i.instance_id not in anchor_ids]
    pool.sort(key=lambda inst: rank_key(pred, inst, anchors))
    return {inst.instance_id for inst in pool[: pred.k]}


def eval_spatial_predicate(
    pred: SpatialPredicate,
    subject: Instance,
    anchors: Sequence[Instance],
    frame: DtFrame | None = None,
) -> bool:
    """Decide ``pred`` for ``subject`` against an anchor set.

    The subject never anchors itself. Binary kinds need at least one other
    anchor. Ranking kinds are answered as top-k membership among the frame's
    non-anchor instances, which requires ``frame``.
    """
    kind = pred.kind
    others = [a for a in anchors if a.instance_id != subject.instance_id]
    if kind.is_ranking:
        if frame is None:
            raise InputError(f"{kind.value} needs the frame to rank against")
        return subject.instance_id in rank_top_k(pred, frame.instances, others)
    if not others:
        raise InputError(f"{kind.value} needs a non-empty anchor set")

    if kind.uses_depth:
        s = _subject_depth(subject)
        a = _aggregate_depth(others)
        return s < a if kind is PredicateKind.NEARER_THAN else s > a

    if kind is PredicateKind.OVERLAPS:
        return max(mask_iou(subject.mask, a.mask) for a in others) > pred.threshold

    if kind is PredicateKind.WITHIN_PX:
        return anchor_distance(subject, others) <= pred.radius

    sx, sy = centroid(subject.mask)
    ax, ay = centroid(mask_union([a.mask for a in others]))
    if kind is PredicateKind.LEFT_OF:
        return sx < ax
    if kind is PredicateKind.RIGHT_OF:
        return sx > ax
    if kind is PredicateKind.ABOVE:
        return sy < ay
    return sy > ay
