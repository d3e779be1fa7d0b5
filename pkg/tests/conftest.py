from __future__ import annotations

import numpy as np
import pytest

from ordirs.dt_core import BBox, DepthStats, DtFrame, Instance, encode_rle


def rect_bitmap(width, height, x0, y0, x1, y1):
    grid = np.zeros((height, width), dtype=np.uint8)
    grid[y0:y1, x0:x1] = 1
    return grid


def make_instance(iid, label, width, height, box, *, conf=1.0, depth=None, description=""):
    x0, y0, x1, y1 = box
    mask = encode_rle(rect_bitmap(width, height, x0, y0, x1, y1))
    stats = None
    if depth is not None:
        stats = DepthStats(depth, 0.0, mask.area)
    return Instance(iid, label, BBox(x0, y0, x1, y1), conf, mask, 1.0, description, stats)


def make_frame(instances, width=16, height=12, index=0, video="v"):
    from ordirs.dt_core import instance_sort_key

    return DtFrame(video, index, index * 1000.0, width, height, tuple(sorted(instances, key=instance_sort_key)))


@pytest.fixture
def simple_frame():
    return make_frame(
        [
            make_instance(0, "operating table", 16, 12, (5, 5, 11, 9), depth=0.5, description="an operating table"),
            make_instance(1, "nurse", 16, 12, (0, 0, 3, 4), depth=0.3, description="a nurse in a blue gown"),
            make_instance(2, "surgeon", 16, 12, (13, 0, 16, 4), depth=0.7, description="a surgeon in a green gown"),
        ]
    )
