"""``.dt.jsonl`` persistence: one self-contained JSON frame per line."""

from __future__ import annotations

import io
import json
import os
from pathlib import Path
from typing import IO, Iterable, Iterator

from ordirs.dt_core.model import DtFrame
from ordirs.errors import StreamOrderError, StreamParseError

STREAM_SUFFIX = ".dt.jsonl"


def dumps_frame(frame: DtFrame) -> str:
    return json.dumps(frame.to_dict(), separators=(",", ":"), ensure_ascii=False, allow_nan=False)


class _OrderGuard:
    # frame_index must strictly increase per video_id; several videos may share a file
    def __init__(self) -> None:
        self.last: dict[str, int] = {}

    def check(self, frame: DtFrame) -> str | None:
        prev = self.last.get(frame.video_id)
        if prev is not None and frame.frame_index <= prev:
            return (
                f"video {frame.video_id!r}: frame_index {frame.frame_index} "
                f"does not follow {prev}"
            )
        self.last[frame.video_id] = frame.frame_index
        return None


def write_stream(frames: Iterable[DtFrame], sink: str | os.PathLike | IO[str]) -> int:
    """Serialize ``frames`` to ``sink``; returns the number of frames written.

    Paths are written atomically (temp file, then rename). Raises
    :class:`StreamOrderError` before anything is committed if frame indices
    are not strictly increasing within a video.
    """
    guard = _OrderGuard()
    buf = io.StringIO()
    n = 0
    for frame in frames:
        problem = guard.check(frame)
        if problem:
            raise StreamOrderError(problem)
        buf.write(dumps_frame(frame))
        buf.write("\n")
        n += 1
    if isinstance(sink, (str, os.PathLike)):
        atomic_write_text(Path(sink), buf.getvalue())
    else:
        sink.write(buf.getvalue())
    return n


def iter_stream(source: str | os.PathLike | IO[str]) -> Iterator[DtFrame]:
    """Yield frames one at a time without loading the whole file."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8", newline="\n") as fh:
            yield from _iter_lines(fh)
    else:
        yield from _iter_lines(source)


def _iter_lines(fh: IO[str]) -> Iterator[DtFrame]:
    guard = _OrderGuard()
    for lineno, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise StreamParseError(exc.msg, lineno, exc.pos) from exc
        if not isinstance(record, dict):
            raise StreamParseError("record is not a JSON object", lineno, 0)
        try:
            frame = DtFrame.from_dict(record)
        except (KeyError, TypeError, ValueError) as exc:
            raise StreamParseError(f"malformed frame record: {exc!r}", lineno) from exc
        problem = guard.check(frame)
        if problem:
            raise StreamOrderError(f"line {lineno}: {problem}")
        yield frame


def read_stream(source: str | os.PathLike | IO[str]) -> list[DtFrame]:
    return list(iter_stream(source))


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
