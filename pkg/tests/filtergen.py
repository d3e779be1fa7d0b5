"""Seeded generators for filter trees and small frames, shared by several test files."""

from __future__ import annotations

import random

import numpy as np

from ordirs.dt_core import BBox, DepthStats, DtFrame, Instance, encode_rle, instance_sort_key
from ordirs.rs_engine.filters import And, Anchor, Label, Not, Or, Sem, Spatial, ZoneRef
from ordirs.spatial import PredicateKind, SpatialPredicate

LABELS = ["nurse", "surgeon", "patient", "operating table", "door", "person", "staff"]
WORDS = ["blue", "green", "gown", "mask", "open", "closed", "tray", "lying"]
ANCHOR_ONLY = [
    PredicateKind.LEFT_OF,
    PredicateKind.RIGHT_OF,
    PredicateKind.ABOVE,
    PredicateKind.BELOW,
    PredicateKind.NEARER_THAN,
    PredicateKind.FARTHER_THAN,
]


def random_predicate(rng: random.Random) -> SpatialPredicate:
    kind = rng.choice(list(PredicateKind))
    if kind is PredicateKind.WITHIN_PX:
        return SpatialPredicate(kind, radius=rng.choice([1.5, 3, 10, 0.25]))
    if kind is PredicateKind.OVERLAPS:
        return SpatialPredicate(kind, tau=rng.choice([None, 0.0, 0.5, 1.0, 0.125]))
    if kind.is_ranking:
        return SpatialPredicate(kind, k=rng.randint(1, 4))
    return SpatialPredicate(kind)


def random_spatial(rng: random.Random, anchor_budget: int, zones: bool = True) -> Spatial:
    pred = random_predicate(rng)
    kind = pred.kind
    needs_anchor = kind in ANCHOR_ONLY or kind in (PredicateKind.WITHIN_PX, PredicateKind.OVERLAPS)
    allows_anchor = kind not in (PredicateKind.LARGEST_K,)
    anchor = None
    if allows_anchor and (needs_anchor or rng.random() < 0.5):
        if anchor_budget > 0 and (not zones or rng.random() < 0.85):
            anchor = Anchor(random_filter(rng, depth=1, anchor_budget=anchor_budget - 1, zones=zones))
        elif zones:
            anchor = ZoneRef(rng.choice(["sterile", "door zone", 'odd "name"']))
        elif needs_anchor:
            return Spatial(SpatialPredicate(PredicateKind.LARGEST_K, k=1))
    return Spatial(pred, anchor)


def random_filter(rng: random.Random, depth: int = 3, anchor_budget: int = 2, zones: bool = True):
    roll = rng.random()
    if depth <= 0 or roll < 0.35:
        r = rng.random()
        if r < 0.35:
            return Label(rng.choice(LABELS))
        if r < 0.6:
            return Sem(" ".join(rng.sample(WORDS, rng.randint(1, 2))))
        return random_spatial(rng, anchor_budget, zones)
    if roll < 0.5:
        return Not(random_filter(rng, depth - 1, anchor_budget, zones))
    children = tuple(random_filter(rng, depth - 1, anchor_budget, zones) for _ in range(rng.randint(2, 3)))
    return And(children) if roll < 0.78 else Or(children)


def random_frame(rng: random.Random, width: int = 20, height: int = 16, n: int | None = None) -> DtFrame:
    """Rectangles (possibly overlapping) with depth and keyword descriptions."""
    n = rng.randint(1, 6) if n is None else n
    labels = ["nurse", "surgeon", "patient", "operating table", "door", "anesthesiologist"]
    insts = []
    for iid in range(n):
        x0, y0 = rng.randrange(0, width - 1), rng.randrange(0, height - 1)
        x1, y1 = rng.randint(x0 + 1, min(width, x0 + 8)), rng.randint(y0 + 1, min(height, y0 + 6))
        grid = np.zeros((height, width), dtype=np.uint8)
        grid[y0:y1, x0:x1] = 1
        mask = encode_rle(grid)
        depth = DepthStats(round(rng.random(), 3), 0.0, mask.area)
        desc = " ".join(rng.sample(WORDS, rng.randint(1, 3)))
        conf = round(rng.uniform(0.3, 1.0), 2)
        insts.append(Instance(iid, rng.choice(labels), BBox(x0, y0, x1, y1), conf, mask, 1.0, desc, depth))
    insts.sort(key=instance_sort_key)
    return DtFrame("rand", 0, 0.0, width, height, tuple(insts))
