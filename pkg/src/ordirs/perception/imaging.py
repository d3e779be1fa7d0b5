"""PNG encoding for frames, masks and 16-bit depth maps."""

from __future__ import annotations

import base64
import io
import re
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from ordirs.errors import InputError

DEPTH_SCALE = 65535


def encode_png(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(array)).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return np.array(img)


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img.convert("RGB"))


def encode_depth_png(depth: np.ndarray) -> bytes:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.size and (depth.min() < 0 or depth.max() > 1):
        raise InputError("depth values must lie in [0, 1]")
    return encode_png(np.round(depth * DEPTH_SCALE).astype(np.uint16))


def decode_depth_png(data: bytes) -> np.ndarray:
    raw = decode_png(data)
    return raw.astype(np.float64) / DEPTH_SCALE


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)


_FRAME_NAME = re.compile(r"^(\d+)\.png$")


def iter_frame_files(directory: str | Path) -> Iterator[tuple[int, Path]]:
    """``(frame_index, path)`` for every ``NNNN.png`` in ``directory``, by index."""
    found = []
    for p in Path(directory).iterdir():
        m = _FRAME_NAME.match(p.name)
        if m and p.is_file():
            found.append((int(m.group(1)), p))
    return iter(sorted(found))
