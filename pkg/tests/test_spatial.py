from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ordirs.dt_core import DepthStats, RleMask, decode_rle, encode_rle
from ordirs.errors import CapabilityMissingError, EmptyMaskError, InputError
from ordirs.spatial import (
    PredicateKind,
    SpatialPredicate,
    Zone,
    bbox_of_mask,
    centroid,
    depth_stats_for_mask,
    eval_spatial_predicate,
    intersection_area,
    mask_iou,
    mask_union,
    rank_top_k,
)

from conftest import make_frame, make_instance


def brute_iou(a, b):
    a, b = a.astype(bool), b.astype(bool)
    u = (a | b).sum()
    return 1.0 if u == 0 else (a & b).sum() / u


def brute_centroid(grid):
    rows, cols = np.nonzero(grid)
    return float((cols + 0.5).mean()), float((rows + 0.5).mean())


def test_iou_examples():
    a = np.zeros((3, 3), dtype=np.uint8)
    a[:, :2] = 1
    b = np.zeros((3, 3), dtype=np.uint8)
    b[:2, :] = 1
    assert mask_iou(encode_rle(a), encode_rle(b)) == pytest.approx(0.5, abs=1e-12)
    assert mask_iou(encode_rle(a), encode_rle(a)) == 1.0
    c = np.zeros((3, 3), dtype=np.uint8)
    c[2, 2] = 1
    assert mask_iou(encode_rle(a), encode_rle(c)) == 0.0
    empty = RleMask.empty(3, 3)
    assert mask_iou(empty, empty) == 1.0


def test_iou_dimension_mismatch():
    with pytest.raises(InputError):
        mask_iou(RleMask.empty(2, 2), RleMask.empty(3, 2))


def test_union_examples():
    a = encode_rle(np.array([[1, 1, 1, 0], [0, 0, 0, 0]]))
    b = encode_rle(np.array([[0, 0, 0, 0], [1, 1, 1, 1]]))
    assert mask_union([a]) == a
    assert mask_union([a, b]).area == 7
    assert mask_union([], width=4, height=4) == RleMask.empty(4, 4)
    with pytest.raises(InputError):
        mask_union([])


def test_centroid_examples():
    g = np.zeros((2, 3), dtype=np.uint8)
    g[0, 0] = 1
    assert centroid(encode_rle(g)) == (0.5, 0.5)
    assert centroid(encode_rle(np.ones((2, 2)))) == (1.0, 1.0)
    g[0, 2] = 1
    assert centroid(encode_rle(g)) == (1.5, 0.5)
    with pytest.raises(EmptyMaskError):
        centroid(RleMask.empty(2, 2))


def test_depth_stats_examples():
    mask = encode_rle(np.array([[1, 1, 1, 0]]))
    stats = depth_stats_for_mask(np.array([[0.2, 0.4, 0.6, 0.9]]), mask)
    oracle = math.sqrt(((0.2 - 0.4) ** 2 + 0 + (0.6 - 0.4) ** 2) / 3)
    assert stats.mean == pytest.approx(0.4)
    assert stats.std == pytest.approx(oracle, abs=1e-6)
    assert stats.std == pytest.approx(0.1633, abs=1e-4)
    assert stats.pixel_count == 3
    const = depth_stats_for_mask(np.full((1, 4), 0.5), mask)
    assert (const.mean, const.std) == (0.5, 0.0)
    single = depth_stats_for_mask(np.array([[0.2, 0.4, 0.6, 0.9]]), encode_rle(np.array([[0, 0, 0, 1]])))
    assert single.std == 0.0 and single.pixel_count == 1
    with pytest.raises(EmptyMaskError):
        depth_stats_for_mask(np.zeros((1, 4)), RleMask.empty(4, 1))


grid_pairs = st.integers(1, 32).flatmap(
    lambda h: st.integers(1, 32).flatmap(
        lambda w: st.tuples(
            arrays(np.uint8, (h, w), elements=st.integers(0, 1)),
            arrays(np.uint8, (h, w), elements=st.integers(0, 1)),
            arrays(np.uint8, (h, w), elements=st.integers(0, 1)),
        )
    )
)


@settings(max_examples=200, deadline=None)
@given(grid_pairs)
def test_algebra_matches_bitmap_oracle(grids):
    a, b, c = grids
    ma, mb, mc = encode_rle(a), encode_rle(b), encode_rle(c)
    assert intersection_area(ma, mb) == int((a & b).sum())
    iou = mask_iou(ma, mb)
    assert iou == pytest.approx(brute_iou(a, b), abs=1e-12)
    assert iou == mask_iou(mb, ma)
    assert 0.0 <= iou <= 1.0
    u = mask_union([ma, mb, mc])
    assert np.array_equal(decode_rle(u), a | b | c)
    assert u == mask_union([mc, ma, mb]) == mask_union([ma, mb, mc, ma])
    assert mask_union([mask_union([ma, mb]), mc]) == mask_union([ma, mask_union([mb, mc])])
    assert u.area <= ma.area + mb.area + mc.area
    if a.any():
        assert mask_iou(ma, ma) == 1.0
        cx, cy = centroid(ma)
        ox, oy = brute_centroid(a)
        assert cx == pytest.approx(ox, abs=1e-9) and cy == pytest.approx(oy, abs=1e-9)
        box = bbox_of_mask(ma)
        rows, cols = np.nonzero(a)
        assert box.as_list() == [cols.min(), rows.min(), cols.max() + 1, rows.max() + 1]
        depth = np.linspace(0, 1, a.size).reshape(a.shape)
        stats = depth_stats_for_mask(depth, ma)
        assert stats.pixel_count == int(a.sum())
        assert stats.mean == pytest.approx(float(depth[a.astype(bool)].mean()), abs=1e-6)


def _inst(iid, box, depth=None, label="person", w=20, h=10):
    return make_instance(iid, label, w, h, box, depth=depth)


def test_left_of_and_nearer():
    subject = _inst(0, (1, 0, 3, 2))  # centroid x=2
    anchor = _inst(1, (4, 0, 6, 2))  # centroid x=5
    left = SpatialPredicate(PredicateKind.LEFT_OF)
    assert eval_spatial_predicate(left, subject, [anchor])
    assert not eval_spatial_predicate(left, anchor, [subject])
    assert eval_spatial_predicate(SpatialPredicate("RIGHT_OF"), anchor, [subject])

    near, far = _inst(0, (0, 0, 2, 2), depth=0.3), _inst(1, (5, 0, 7, 2), depth=0.7)
    assert eval_spatial_predicate(SpatialPredicate("NEARER_THAN"), near, [far])
    assert not eval_spatial_predicate(SpatialPredicate("NEARER_THAN"), far, [near])
    assert eval_spatial_predicate(SpatialPredicate("FARTHER_THAN"), far, [near])


def test_above_below_overlap_within():
    top, bottom = _inst(0, (0, 0, 2, 2)), _inst(1, (0, 6, 2, 8))
    assert eval_spatial_predicate(SpatialPredicate("ABOVE"), top, [bottom])
    assert eval_spatial_predicate(SpatialPredicate("BELOW"), bottom, [top])
    overl = _inst(2, (1, 1, 3, 3))
    assert eval_spatial_predicate(SpatialPredicate("OVERLAPS"), overl, [top])
    assert not eval_spatial_predicate(SpatialPredicate("OVERLAPS", tau=0.5), overl, [top])
    assert not eval_spatial_predicate(SpatialPredicate("OVERLAPS"), bottom, [top])
    assert eval_spatial_predicate(SpatialPredicate("WITHIN_PX", radius=6.0), bottom, [top])
    assert not eval_spatial_predicate(SpatialPredicate("WITHIN_PX", radius=5.9), bottom, [top])


def test_multi_anchor_uses_union_centroid():
    a1, a2 = _inst(1, (0, 0, 2, 2)), _inst(2, (10, 0, 12, 2))  # union centroid x = 6
    assert eval_spatial_predicate(SpatialPredicate("LEFT_OF"), _inst(0, (4, 4, 6, 6)), [a1, a2])
    assert not eval_spatial_predicate(SpatialPredicate("LEFT_OF"), _inst(0, (7, 4, 9, 6)), [a1, a2])


def test_depth_predicate_without_depth_raises():
    with pytest.raises(CapabilityMissingError):
        eval_spatial_predicate(SpatialPredicate("NEARER_THAN"), _inst(0, (0, 0, 1, 1)), [_inst(1, (2, 2, 3, 3), 0.5)])


def test_empty_anchor_set_is_input_error():
    with pytest.raises(InputError):
        eval_spatial_predicate(SpatialPredicate("LEFT_OF"), _inst(0, (0, 0, 1, 1)), [])


def test_nearest_k_by_distance():
    # anchor centroid (10.5, 0.5); persons at horizontal distances 3, 5, 9
    anchor = _inst(9, (10, 0, 11, 1), label="operating table")
    persons = [_inst(1, (13, 0, 14, 1)), _inst(2, (5, 0, 6, 1)), _inst(3, (19, 0, 20, 1))]
    frame = make_frame(persons + [anchor], 20, 10)
    pred = SpatialPredicate("NEAREST_K", k=1)
    assert rank_top_k(pred, frame.instances, [anchor]) == {1}
    assert [eval_spatial_predicate(pred, p, [anchor], frame) for p in persons] == [True, False, False]
    assert rank_top_k(SpatialPredicate("FARTHEST_K", k=2), frame.instances, [anchor]) == {2, 3}


def test_ranking_ties_break_by_id_and_depth_mode():
    a, b, c = _inst(4, (0, 0, 2, 2), 0.3), _inst(2, (5, 0, 7, 2), 0.3), _inst(3, (8, 0, 9, 1), 0.9)
    assert rank_top_k(SpatialPredicate("NEAREST_K", k=1), [a, b, c]) == {2}
    assert rank_top_k(SpatialPredicate("FARTHEST_K", k=1), [a, b, c]) == {3}
    assert rank_top_k(SpatialPredicate("LARGEST_K", k=2), [a, b, c]) == {2, 4}


@pytest.mark.parametrize(
    "kwargs",
    [dict(kind="WITHIN_PX", radius=0), dict(kind="OVERLAPS", tau=1.5), dict(kind="NEAREST_K", k=0), dict(kind="LARGEST_K")],
)
def test_predicate_parameter_ranges(kwargs):
    with pytest.raises(InputError):
        SpatialPredicate(**kwargs)


def test_zone_rasterize_and_anchor():
    zone = Zone("sterile", ((2, 2), (6, 2), (6, 6), (2, 6)))
    mask = zone.rasterize(10, 10)
    assert mask.area == 16
    inst = zone.as_instance(10, 10)
    assert centroid(inst.mask) == (4.0, 4.0)
    near = _inst(0, (7, 3, 8, 4), w=10, h=10)
    assert eval_spatial_predicate(SpatialPredicate("WITHIN_PX", radius=4), near, [inst])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 18), st.integers(0, 8), st.floats(0, 1)), min_size=2, max_size=6, unique_by=lambda t: (t[0], t[1])))
def test_order_properties(specs):
    insts = [_inst(i, (x, y, x + 1, y + 1), d) for i, (x, y, d) in enumerate(specs)]
    left = SpatialPredicate("LEFT_OF")
    nearer = SpatialPredicate("NEARER_THAN")
    for s in insts:
        for a in insts:
            if s is a:
                continue
            assert not (eval_spatial_predicate(left, s, [a]) and eval_spatial_predicate(left, a, [s]))
            if s.depth.mean != a.depth.mean:
                assert eval_spatial_predicate(nearer, s, [a]) != eval_spatial_predicate(nearer, a, [s])
