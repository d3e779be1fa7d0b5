"""Segmentation metrics and the benchmark harness.

Scores follow the usual reasoning-segmentation protocol: cIoU accumulates
intersection and union pixels over a sample's frames, gIoU averages the
per-frame IoUs. Each category is then summarised as mean and sample
standard deviation over its samples, rendered as ``"75.80±3.58"``.
"""

from __future__ import annotations

import json
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence


from ordirs.dt_core import DtFrame, RleMask, encode_rle
from ordirs.dt_core.stream import atomic_write_text
from ordirs.errors import InputError, OrdirsError
from ordirs.llm import LlmClient
from ordirs.spatial import intersection_area, mask_iou

log = logging.getLogger(__name__)

QUERY_TYPES = ("semantic", "spatial", "mixed")


@dataclass(frozen=True)
class AnnotationSample:
    sample_id: str
    video_id: str
    frame_indices: tuple[int, ...]
    query: str
    query_type: str
    gt_masks: tuple[RleMask, ...]

    def __post_init__(self) -> None:
        if self.query_type not in QUERY_TYPES:
            raise InputError(f"{self.sample_id}: query_type must be one of {QUERY_TYPES}, got {self.query_type!r}")
        if len(self.frame_indices) != len(self.gt_masks):
            raise InputError(f"{self.sample_id}: {len(self.frame_indices)} frames but {len(self.gt_masks)} masks")
        if len(set(self.frame_indices)) != len(self.frame_indices):
            raise InputError(f"{self.sample_id}: repeated frame index")

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "video_id": self.video_id,
            "frame_indices": list(self.frame_indices),
            "query": self.query,
            "query_type": self.query_type,
            "gt_masks": [m.to_dict() for m in self.gt_masks],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Path | None = None) -> "AnnotationSample":
        masks = tuple(_load_mask(m, base_dir) for m in data["gt_masks"])
        return cls(
            sample_id=str(data["sample_id"]),
            video_id=str(data["video_id"]),
            frame_indices=tuple(int(i) for i in data["frame_indices"]),
            query=str(data["query"]),
            query_type=str(data["query_type"]),
            gt_masks=masks,
        )


def _load_mask(ref: Any, base_dir: Path | None) -> RleMask:
    if isinstance(ref, dict):
        return RleMask.from_dict(ref)
    if isinstance(ref, str):
        path = (base_dir or Path(".")) / ref
        if path.suffix == ".png":
            from ordirs.perception.imaging import decode_png

            return encode_rle(decode_png(path.read_bytes()) > 0)
        return RleMask.from_dict(json.loads(path.read_text(encoding="utf-8")))
    raise InputError(f"mask reference must be an RLE object or a relative path, got {type(ref).__name__}")


def load_annotations(path: str | Path) -> list[AnnotationSample]:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    return [AnnotationSample.from_dict(s, path.parent) for s in doc["samples"]]


def save_annotations(samples: Sequence[AnnotationSample], path: str | Path) -> None:
    doc = {"samples": [s.to_dict() for s in samples]}
    atomic_write_text(Path(path), json.dumps(doc, separators=(",", ":")) + "\n")


def _check_pairs(preds: Sequence[RleMask], gts: Sequence[RleMask]) -> None:
    if len(preds) != len(gts):
        raise InputError(f"{len(preds)} predictions for {len(gts)} ground-truth masks")
    if not preds:
        raise InputError("need at least one frame")
    for t, (p, g) in enumerate(zip(preds, gts)):
        if (p.width, p.height) != (g.width, g.height):
            raise InputError(f"frame {t}: prediction {p.width}x{p.height} vs ground truth {g.width}x{g.height}")


def g_iou(preds: Sequence[RleMask], gts: Sequence[RleMask]) -> float:
    """Mean of per-frame IoUs."""
    _check_pairs(preds, gts)
    return sum(mask_iou(p, g) for p, g in zip(preds, gts)) / len(preds)


def c_iou(preds: Sequence[RleMask], gts: Sequence[RleMask]) -> float:
    """Cumulative intersection over cumulative union; 1.0 when nothing is foreground."""
    _check_pairs(preds, gts)
    inter = union = 0
    for p, g in zip(preds, gts):
        i = intersection_area(p, g)
        inter += i
        union += p.area + g.area - i
    return 1.0 if union == 0 else inter / union


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation; std is 0 for a single value."""
    if not values:
        return 0.0, 0.0
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def format_pm(mean: float, std: float) -> str:
    return f"{mean:.2f}±{std:.2f}"


@dataclass
class SampleScore:
    sample_id: str
    video_id: str
    query_type: str
    query: str
    ciou: float  # percent
    giou: float  # percent
    n_frames: int
    frame_seconds: list[float] = field(default_factory=list)
    error: str | None = None

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        out = {
            "sample_id": self.sample_id,
            "video_id": self.video_id,
            "query_type": self.query_type,
            "query": self.query,
            "ciou": self.ciou,
            "giou": self.giou,
            "n_frames": self.n_frames,
            "error": self.error,
        }
        if include_timing:
            out["seconds_per_image"] = statistics.fmean(self.frame_seconds) if self.frame_seconds else None
        return out


@dataclass(frozen=True)
class CategoryStats:
    n: int
    ciou_mean: float
    ciou_std: float
    giou_mean: float
    giou_std: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "ciou": {"mean": self.ciou_mean, "std": self.ciou_std, "text": format_pm(self.ciou_mean, self.ciou_std)},
            "giou": {"mean": self.giou_mean, "std": self.giou_std, "text": format_pm(self.giou_mean, self.giou_std)},
        }


@dataclass
class BenchmarkReport:
    categories: dict[str, CategoryStats]
    samples: list[SampleScore]
    time_mean: float = 0.0
    time_std: float = 0.0
    method: str = "ORDiRS"

    @classmethod
    def from_samples(cls, samples: Sequence[SampleScore], method: str = "ORDiRS") -> "BenchmarkReport":
        cats: dict[str, CategoryStats] = {}
        for qt in QUERY_TYPES:
            rows = [s for s in samples if s.query_type == qt]
            if not rows:
                continue
            cm, cs = mean_std([s.ciou for s in rows])
            gm, gs = mean_std([s.giou for s in rows])
            cats[qt] = CategoryStats(len(rows), cm, cs, gm, gs)
        times = [t for s in samples for t in s.frame_seconds]
        tm, ts = mean_std(times)
        return cls(cats, list(samples), tm, ts, method)

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "method": self.method,
            "categories": {k: v.to_dict() for k, v in self.categories.items()},
            "samples": [s.to_dict(include_timing) for s in self.samples],
        }
        if include_timing:
            out["time_s"] = {"mean": self.time_mean, "std": self.time_std, "text": format_pm(self.time_mean, self.time_std)}
        return out

    def render_table(self, include_timing: bool = True) -> str:
        """Plain-text table with one cIoU and one gIoU column per observed category."""
        cats = [c for c in QUERY_TYPES if c in self.categories]
        header = ["Method"]
        header += [f"cIoU {c.capitalize()}" for c in cats]
        header += [f"gIoU {c.capitalize()}" for c in cats]
        row = [self.method]
        row += [format_pm(self.categories[c].ciou_mean, self.categories[c].ciou_std) for c in cats]
        row += [format_pm(self.categories[c].giou_mean, self.categories[c].giou_std) for c in cats]
        if include_timing:
            header.append("Time(s)")
            row.append(format_pm(self.time_mean, self.time_std))
        widths = [max(len(h), len(r)) for h, r in zip(header, row)]
        fmt = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        rule = "-+-".join("-" * w for w in widths)
        return "\n".join([fmt(header), rule, fmt(row)]) + "\n"


Engine = Callable[..., tuple[list, Any]]


def score_sample(
    sample: AnnotationSample,
    frames: Sequence[DtFrame],
    llm: LlmClient,
    engine: Engine,
) -> SampleScore:
    by_index = {f.frame_index: f for f in frames}
    missing = [i for i in sample.frame_indices if i not in by_index]
    base = dict(
        sample_id=sample.sample_id,
        video_id=sample.video_id,
        query_type=sample.query_type,
        query=sample.query,
        n_frames=len(sample.frame_indices),
    )
    if missing:
        return SampleScore(**base, ciou=0.0, giou=0.0, error=f"frames missing from DT stream: {missing[:5]}")
    chosen = [by_index[i] for i in sample.frame_indices]
    try:
        results, _plan = engine(sample.query, chosen, llm)
    except OrdirsError as exc:
        log.warning("sample %s failed: %s", sample.sample_id, exc)
        return SampleScore(**base, ciou=0.0, giou=0.0, error=f"{type(exc).__name__}: {exc}")
    by_result = {r.frame_index: r for r in results}
    preds = [by_result[i].mask for i in sample.frame_indices]
    errors = sorted({r.error for r in results if r.error})
    return SampleScore(
        **base,
        ciou=100.0 * c_iou(preds, list(sample.gt_masks)),
        giou=100.0 * g_iou(preds, list(sample.gt_masks)),
        frame_seconds=[by_result[i].elapsed_s for i in sample.frame_indices],
        error="; ".join(errors) if errors else None,
    )


def run_benchmark(
    samples: Sequence[AnnotationSample],
    frames_by_video: Mapping[str, Sequence[DtFrame]],
    llm: LlmClient,
    engine: Engine | None = None,
    *,
    jobs: int = 1,
    method: str = "ORDiRS",
) -> BenchmarkReport:
    """Score every sample with ``engine`` and aggregate per query type."""
    if not samples:
        raise InputError("dataset is empty")
    if engine is None:
        from ordirs.rs_engine import segment_frames as engine

    def one(sample: AnnotationSample) -> SampleScore:
        return score_sample(sample, frames_by_video.get(sample.video_id, ()), llm, engine)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(one, samples))
    else:
        scores = [one(s) for s in samples]
    return BenchmarkReport.from_samples(scores, method)
