"""Frame image -> DtFrame assembly over a :class:`PerceptionBackend`."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Sequence

import numpy as np

from ordirs.dt_core import BBox, DtFrame, Instance, RleMask, instance_sort_key
from ordirs.errors import EmptyMaskError, InputError, ProtocolError
from ordirs.perception.contracts import Detection, PerceptionBackend, PipelineConfig
from ordirs.spatial import depth_stats_for_mask

log = logging.getLogger(__name__)


def _check_image(image: np.ndarray) -> None:
    if image is None or np.asarray(image).size == 0:
        raise InputError("image is empty")


def detect(backend: PerceptionBackend, image: np.ndarray, lexicon: Sequence[str]) -> list[Detection]:
    """Run the detector and enforce its post-conditions."""
    _check_image(image)
    if not lexicon:
        raise InputError("lexicon is empty")
    allowed = set(lexicon)
    dets = backend.detect(image, list(lexicon))
    for d in dets:
        if d.label not in allowed:
            raise ProtocolError(f"detector returned label {d.label!r} outside the lexicon")
        if not 0.0 <= d.score <= 1.0:
            raise ProtocolError(f"detector score {d.score} outside [0, 1]")
    # stable: equal scores keep backend order
    return sorted(dets, key=lambda d: -d.score)


def segment_box(backend: PerceptionBackend, image: np.ndarray, bbox: BBox) -> tuple[RleMask, float]:
    _check_image(image)
    mask, beta = backend.segment_box(image, bbox)
    h, w = image.shape[:2]
    if (mask.width, mask.height) != (w, h):
        raise ProtocolError(f"segmenter mask {mask.width}x{mask.height} does not match image {w}x{h}")
    if not 0.0 <= beta <= 1.0:
        raise ProtocolError(f"segmenter confidence {beta} outside [0, 1]")
    if mask.area == 0:
        raise EmptyMaskError(f"segmenter produced an empty mask for box {bbox.as_list()}")
    return mask, beta


def describe_region(backend: PerceptionBackend, image: np.ndarray, bbox: BBox) -> str:
    _check_image(image)
    text = backend.describe_region(image, bbox)
    if not isinstance(text, str) or not text.strip():
        raise ProtocolError("captioner returned an empty description")
    return text


def estimate_depth(backend: PerceptionBackend, image: np.ndarray) -> np.ndarray:
    _check_image(image)
    depth = np.asarray(backend.estimate_depth(image), dtype=np.float64)
    if depth.shape != image.shape[:2]:
        raise ProtocolError(f"depth map shape {depth.shape} does not match image {image.shape[:2]}")
    if depth.min() < 0 or depth.max() > 1:
        raise ProtocolError("depth map values outside [0, 1]")
    return depth


def suppress_duplicates(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy suppression: keep the higher-scoring box of any pair above ``iou_threshold``."""
    kept: list[Detection] = []
    for d in sorted(dets, key=lambda d: -d.score):
        if all(d.bbox.iou(k.bbox) <= iou_threshold for k in kept):
            kept.append(d)
    return kept


def build_dt_frame(
    image: np.ndarray,
    frame_index: int,
    config: PipelineConfig,
    backend: PerceptionBackend,
    *,
    video_id: str = "",
    fps: float = 1.0,
    depth_map_ref: str | None = None,
) -> DtFrame:
    """Encode one frame image into its digital-twin record.

    Detections below ``config.det_threshold`` are dropped, near-duplicates
    suppressed, and the rest capped at ``config.max_instances``. Each
    surviving box prompts the segmenter; captions and depth statistics are
    added when enabled.
    """
    image = np.asarray(image)
    height, width = image.shape[:2]
    dets = [d for d in detect(backend, image, config.lexicon) if d.score >= config.det_threshold]
    dets = suppress_duplicates(dets, config.dedup_iou)
    dets.sort(key=lambda d: (-d.score, d.bbox.x_min, d.bbox.y_min, d.label))
    dets = dets[: config.max_instances]

    depth_map = estimate_depth(backend, image) if config.enable_depth else None

    instances = []
    for iid, det in enumerate(dets):
        mask, beta = segment_box(backend, image, det.bbox)
        description = describe_region(backend, image, det.bbox) if config.enable_captions else ""
        stats = depth_stats_for_mask(depth_map, mask) if depth_map is not None else None
        instances.append(Instance(iid, det.label, det.bbox, det.score, mask, beta, description, stats))
    instances.sort(key=instance_sort_key)

    return DtFrame(
        video_id=video_id,
        frame_index=frame_index,
        timestamp_ms=frame_index * 1000.0 / fps,
        width=int(width),
        height=int(height),
        instances=tuple(instances),
        depth_map_ref=depth_map_ref,
        producer=backend.producer(),
    )


def build_dt_stream(
    images: Iterable[tuple[int, np.ndarray]],
    config: PipelineConfig,
    backend: PerceptionBackend,
    *,
    video_id: str = "",
    fps: float = 1.0,
    jobs: int = 1,
) -> list[DtFrame]:
    """Build frames independently, possibly in parallel; output order follows input order."""
    items = list(images)

    def one(item: tuple[int, np.ndarray]) -> DtFrame:
        index, image = item
        return build_dt_frame(image, index, config, backend, video_id=video_id, fps=fps)

    if jobs <= 1:
        return [one(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, items))
