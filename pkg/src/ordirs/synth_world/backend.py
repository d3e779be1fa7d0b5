"""Perception backend that reads the synthetic world back out of its images.

Each object is painted in a unique flat colour, so decoding an image into an
object-index map is exact. Noise, when configured, perturbs only detector
boxes and scores; the draws are seeded from the noise seed, a checksum of
the image and the object index, so repeated runs agree.
"""

from __future__ import annotations

import hashlib
import threading
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ordirs.dt_core import BBox, RleMask, encode_rle
from ordirs.errors import EmptyMaskError, InputError
from ordirs.perception.contracts import Detection
from ordirs.synth_world.world import BACKGROUND, BACKGROUND_DEPTH, WorldState, object_color, producer_map


@dataclass(frozen=True)
class NoiseConfig:
    seed: int = 0
    jitter_sigma: float = 0.0  # px, per box coordinate
    score_sigma: float = 0.0  # half-normal drop below the base score
    score_overrides: Mapping[str, float] = field(default_factory=dict)  # object name -> base score

    @property
    def noiseless(self) -> bool:
        return self.jitter_sigma == 0 and self.score_sigma == 0 and not self.score_overrides


class SyntheticBackend:
    def __init__(self, world: WorldState, noise: NoiseConfig | None = None, cache_size: int = 16):
        self.world = world
        self.noise = noise or NoiseConfig()
        self.identity = f"synthetic:{world.spec.name}"
        codes = np.array([_pack(object_color(i)) for i in range(len(world.spec.objects))], dtype=np.int64)
        self._order = np.argsort(codes)
        self._sorted_codes = codes[self._order]
        self._cache: OrderedDict[bytes, tuple[np.ndarray, int]] = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()

    def producer(self) -> dict[str, str]:
        return producer_map()

    # -- decoding -----------------------------------------------------------

    def _decode(self, image: np.ndarray) -> tuple[np.ndarray, int]:
        """Object index per pixel (-1 = background) and the image checksum."""
        image = np.ascontiguousarray(np.asarray(image)[..., :3], dtype=np.uint8)
        spec = self.world.spec
        if image.shape[:2] != (spec.height, spec.width):
            raise InputError(f"image {image.shape[1]}x{image.shape[0]} does not match scenario {spec.width}x{spec.height}")
        raw = image.tobytes()
        key = hashlib.blake2b(raw, digest_size=16).digest()
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        packed = _pack_array(image)
        index_map = np.full(packed.shape, -1, dtype=np.int32)
        fg = packed != _pack(BACKGROUND)
        if fg.any():
            if not len(self._sorted_codes):
                raise InputError("image contains colours outside the synthetic palette")
            pos = np.clip(np.searchsorted(self._sorted_codes, packed[fg]), 0, len(self._sorted_codes) - 1)
            if not np.array_equal(self._sorted_codes[pos], packed[fg]):
                raise InputError("image contains colours outside the synthetic palette")
            index_map[fg] = self._order[pos]
        with self._lock:
            crc = zlib.crc32(raw)
            self._cache[key] = (index_map, crc)
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return index_map, crc

    def _rng(self, image_crc: int, obj_index: int) -> np.random.Generator:
        return np.random.default_rng([self.noise.seed, image_crc, obj_index])

    # -- contract -----------------------------------------------------------

    def detect(self, image: np.ndarray, lexicon: Sequence[str]) -> list[Detection]:
        index_map, crc = self._decode(image)
        world = self.world
        h, w = index_map.shape
        allowed = set(lexicon)
        out = []
        for i in np.unique(index_map[index_map >= 0]).tolist():
            obj = world.spec.objects[i]
            if obj.label not in allowed:
                continue
            ys, xs = np.nonzero(index_map == i)
            box = [float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1)]
            rng = self._rng(crc, i)
            jitter = rng.normal(0.0, self.noise.jitter_sigma, size=4) if self.noise.jitter_sigma > 0 else np.zeros(4)
            drop = abs(rng.normal(0.0, self.noise.score_sigma)) if self.noise.score_sigma > 0 else 0.0
            box = _clip_box([b + d for b, d in zip(box, jitter)], w, h)
            score = self.noise.score_overrides.get(obj.name, 1.0) - drop
            out.append(Detection(obj.label, BBox(*box), float(min(1.0, max(0.0, round(score, 6))))))
        return out

    def _pick(self, image: np.ndarray, bbox: BBox) -> tuple[np.ndarray, int]:
        index_map, _ = self._decode(image)
        h, w = index_map.shape
        x0, y0, x1, y1 = bbox.pixel_window(w, h)
        window = index_map[y0:y1, x0:x1]
        counts = np.bincount(window[window >= 0].ravel(), minlength=1) if window.size else np.zeros(1, int)
        if counts.sum() == 0:
            raise EmptyMaskError(f"box {bbox.as_list()} overlaps no object")
        return index_map, int(np.argmax(counts))

    def segment_box(self, image: np.ndarray, bbox: BBox) -> tuple[RleMask, float]:
        index_map, i = self._pick(image, bbox)
        bitmap = index_map == i
        ys, xs = np.nonzero(bitmap)
        truth = BBox(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))
        return encode_rle(bitmap), float(round(bbox.iou(truth), 6))

    def describe_region(self, image: np.ndarray, bbox: BBox) -> str:
        _, i = self._pick(image, bbox)
        return self.world.spec.objects[i].full_description

    def estimate_depth(self, image: np.ndarray) -> np.ndarray:
        index_map, _ = self._decode(image)
        lut = np.array([BACKGROUND_DEPTH] + [o.depth for o in self.world.spec.objects], dtype=np.float64)
        return lut[index_map + 1]


def _pack(rgb: tuple[int, int, int]) -> int:
    return (rgb[0] << 16) | (rgb[1] << 8) | rgb[2]


def _pack_array(image: np.ndarray) -> np.ndarray:
    img = image.astype(np.int64)
    return (img[..., 0] << 16) | (img[..., 1] << 8) | img[..., 2]


def _clip_box(box: list[float], width: int, height: int) -> list[float]:
    x0, y0, x1, y1 = (round(float(v), 3) for v in box)
    x0, x1 = min(max(x0, 0.0), width - 1.0), min(max(x1, 1.0), float(width))
    y0, y1 = min(max(y0, 0.0), height - 1.0), min(max(y1, 1.0), float(height))
    if x1 <= x0:
        x1 = min(float(width), x0 + 1.0)
        x0 = x1 - 1.0
    if y1 <= y0:
        y1 = min(float(height), y0 + 1.0)
        y0 = y1 - 1.0
    return [x0, y0, x1, y1]
