"""Frame validation. Violations are returned as data and never raised."""

from __future__ import annotations

from dataclasses import dataclass
from numbers import Real
from typing import Any, Mapping

from ordirs.dt_core.model import DtFrame, Instance, instance_sort_key
from ordirs.dt_core.rle import RleMask


@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    message: str

    def to_dict(self) -> dict[str, str]:
        return {"code": self.code, "path": self.path, "message": self.message}


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v: Any) -> bool:
    return isinstance(v, Real) and not isinstance(v, bool)


def validate_frame(frame: DtFrame | Mapping[str, Any]) -> list[Violation]:
    """Report every violated invariant of ``frame`` and its nested records.

    Accepts a constructed :class:`DtFrame` or the raw decoded JSON mapping.
    An empty list means the frame is valid.
    """
    if not isinstance(frame, DtFrame):
        try:
            frame = DtFrame.from_dict(frame)
        except Exception as exc:  # any shape problem is a schema violation
            return [Violation("SCHEMA", "", f"cannot interpret record: {exc!r}")]
    out: list[Violation] = []
    try:
        _check_frame(frame, out)
    except Exception as exc:
        out.append(Violation("SCHEMA", "", f"unexpected field types: {exc!r}"))
    return out


def _check_frame(frame: DtFrame, out: list[Violation]) -> None:
    dims_ok = _is_int(frame.width) and _is_int(frame.height) and frame.width > 0 and frame.height > 0
    if not dims_ok:
        out.append(Violation("FRAME_DIMENSIONS", "", f"width/height must be positive integers, got {frame.width!r}x{frame.height!r}"))
    if not _is_int(frame.frame_index) or frame.frame_index < 0:
        out.append(Violation("FRAME_INDEX", "frame_index", f"must be a non-negative integer, got {frame.frame_index!r}"))
    if not _is_real(frame.timestamp_ms) or frame.timestamp_ms < 0:
        out.append(Violation("TIMESTAMP", "timestamp_ms", f"must be a non-negative number, got {frame.timestamp_ms!r}"))
    if not isinstance(frame.video_id, str):
        out.append(Violation("SCHEMA", "video_id", "must be a string"))

    seen: set[Any] = set()
    for i, inst in enumerate(frame.instances):
        path = f"instances[{i}]"
        try:
            hash(inst.instance_id)
            if inst.instance_id in seen:
                out.append(Violation("DUPLICATE_INSTANCE_ID", path, f"instance_id {inst.instance_id!r} repeated"))
            seen.add(inst.instance_id)
        except TypeError:
            out.append(Violation("SCHEMA", f"{path}.instance_id", "unhashable identifier"))
        try:
            _check_instance(inst, frame, path, dims_ok, out)
        except Exception as exc:
            out.append(Violation("SCHEMA", path, f"unexpected field types: {exc!r}"))

    try:
        keys = [instance_sort_key(inst) for inst in frame.instances]
        if keys != sorted(keys):
            out.append(Violation("INSTANCE_ORDER", "instances", "instances not ordered by confidence desc, (x_min, y_min, instance_id)"))
    except TypeError:
        out.append(Violation("INSTANCE_ORDER", "instances", "ordering keys are not comparable"))


def _check_instance(inst: Instance, frame: DtFrame, path: str, dims_ok: bool, out: list[Violation]) -> None:
    b = inst.bbox
    if dims_ok and not (0 <= b.x_min < b.x_max <= frame.width and 0 <= b.y_min < b.y_max <= frame.height):
        out.append(Violation("BBOX_INVALID", f"{path}.bbox", f"box {b.as_list()} invalid for {frame.width}x{frame.height}"))
    if not isinstance(inst.label, str) or not inst.label:
        out.append(Violation("LABEL_INVALID", f"{path}.label", "label must be a non-empty string"))
    if not isinstance(inst.description, str):
        out.append(Violation("SCHEMA", f"{path}.description", "description must be a string"))
    for name in ("det_confidence", "mask_confidence"):
        v = getattr(inst, name)
        if not _is_real(v) or not 0.0 <= v <= 1.0:
            out.append(Violation(f"{name.upper()}_RANGE", f"{path}.{name}", f"must lie in [0,1], got {v!r}"))

    mask_ok = _check_mask(inst.mask, frame, f"{path}.mask", dims_ok, out)
    if mask_ok:
        area = inst.mask.area
        if area == 0:
            out.append(Violation("MASK_EMPTY", f"{path}.mask", "mask has zero area"))
        elif dims_ok and not _mask_touches_box(inst.mask, b.pixel_window(frame.width, frame.height)):
            out.append(Violation("MASK_BBOX_DISJOINT", f"{path}.mask", "mask does not overlap its bounding box"))

    d = inst.depth
    if d is not None:
        dp = f"{path}.depth"
        if not _is_real(d.mean) or not 0.0 <= d.mean <= 1.0:
            out.append(Violation("DEPTH_MEAN_RANGE", dp, f"mean must lie in [0,1], got {d.mean!r}"))
        if not _is_real(d.std) or d.std < 0:
            out.append(Violation("DEPTH_STD_NEGATIVE", dp, f"std must be >= 0, got {d.std!r}"))
        if not _is_int(d.pixel_count) or d.pixel_count <= 0:
            out.append(Violation("DEPTH_PIXEL_COUNT", dp, f"pixel_count must be a positive integer, got {d.pixel_count!r}"))
        else:
            if d.pixel_count == 1 and _is_real(d.std) and d.std != 0:
                out.append(Violation("DEPTH_SINGLE_PIXEL_STD", dp, "std must be 0 for a single pixel"))
            if mask_ok and d.pixel_count != inst.mask.area:
                out.append(Violation("DEPTH_PIXEL_COUNT_MISMATCH", dp, f"pixel_count {d.pixel_count} != mask area {inst.mask.area}"))


def _check_mask(mask: RleMask, frame: DtFrame, path: str, dims_ok: bool, out: list[Violation]) -> bool:
    ok = True
    if not all(_is_int(r) for r in mask.runs):
        out.append(Violation("RLE_TYPE", path, "runs must be integers"))
        return False
    if not _is_int(mask.width) or not _is_int(mask.height):
        out.append(Violation("RLE_TYPE", path, "mask dimensions must be integers"))
        return False
    if not mask.runs:
        out.append(Violation("RLE_SUM_MISMATCH", path, "no runs"))
        return False
    if any(r < 0 for r in mask.runs):
        out.append(Violation("RLE_NEGATIVE_RUN", path, "negative run length"))
        ok = False
    if any(r == 0 for r in mask.runs[1:]):
        out.append(Violation("RLE_ZERO_RUN", path, "only the first run may be zero"))
        ok = False
    if dims_ok and (mask.width, mask.height) != (frame.width, frame.height):
        out.append(Violation("MASK_DIMENSIONS", path, f"mask {mask.width}x{mask.height} != frame {frame.width}x{frame.height}"))
        ok = False
    if sum(mask.runs) != mask.width * mask.height:
        out.append(Violation("RLE_SUM_MISMATCH", path, f"run sum {sum(mask.runs)} != {mask.width}x{mask.height}"))
        ok = False
    return ok


def _mask_touches_box(mask: RleMask, window: tuple[int, int, int, int]) -> bool:
    c0, r0, c1, r1 = window
    if c0 >= c1 or r0 >= r1:
        return False
    w = mask.width
    for start, end in mask.intervals():
        first_row = max(r0, int(start) // w)
        last_row = min(r1 - 1, (int(end) - 1) // w)
        for r in range(first_row, last_row + 1):
            cs = max(int(start), r * w) - r * w
            ce = min(int(end), (r + 1) * w) - r * w
            if cs < c1 and ce > c0:
                return True
    return False
