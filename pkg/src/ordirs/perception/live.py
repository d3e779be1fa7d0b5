"""HTTP client for remote perception services, with record/replay cassettes.

Wire protocol: one JSON ``POST`` route per capability (``/detect``,
``/segment``, ``/caption``, ``/depth``). Images and depth maps travel as
base64 PNG; masks as ``{width, height, runs}``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import httpx
import numpy as np

from ordirs.dt_core import BBox, RleMask
from ordirs.errors import CassetteError, ConfigError, EmptyMaskError, ProtocolError, TransportError
from ordirs.perception.contracts import CAPABILITIES, Detection
from ordirs.perception.imaging import b64, decode_depth_png, encode_png, unb64

log = logging.getLogger(__name__)

ROUTES = {"detect": "/detect", "segment": "/segment", "caption": "/caption", "depth": "/depth"}


def request_digest(route: str, body: Mapping[str, Any]) -> str:
    canonical = json.dumps({"route": route, "body": body}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Cassette:
    """JSON-lines store of ``{route, request_digest, response}`` exchanges.

    ``mode`` is ``"record"`` (append every live exchange) or ``"replay"``
    (answer from the file; unknown digests raise :class:`CassetteError`).
    """

    def __init__(self, path: str | Path, mode: str):
        if mode not in ("record", "replay"):
            raise ConfigError(f"cassette mode must be record or replay, got {mode!r}")
        self.path = Path(path)
        self.mode = mode
        self._lock = threading.Lock()
        self._entries: dict[str, Any] = {}
        if mode == "replay":
            if not self.path.exists():
                raise CassetteError(f"cassette {self.path} not found")
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._entries[rec["request_digest"]] = rec["response"]

    def lookup(self, route: str, digest: str) -> Any:
        try:
            return self._entries[digest]
        except KeyError:
            raise CassetteError(f"no recorded response for {route} (request digest {digest})") from None

    def record(self, route: str, digest: str, response: Any) -> None:
        line = json.dumps({"route": route, "request_digest": digest, "response": response}, sort_keys=True)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(line + "\n")


class HttpBackend:
    """:class:`~ordirs.perception.contracts.PerceptionBackend` over HTTP."""

    def __init__(
        self,
        endpoints: Mapping[str, str],
        *,
        timeouts: Mapping[str, float] | None = None,
        retries: int = 2,
        backoff: float = 0.25,
        cassette: Cassette | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        missing = [c for c in CAPABILITIES if c not in endpoints]
        if missing and (cassette is None or cassette.mode != "replay"):
            raise ConfigError(f"live backend needs endpoints for {missing}")
        self.endpoints = dict(endpoints)
        self.timeouts = dict(timeouts or {})
        self.retries = retries
        self.backoff = backoff
        self.cassette = cassette
        self._client = client or httpx.Client()
        self._sleep = sleep
        self.identity = "live:" + ",".join(f"{c}={self.endpoints.get(c, '-')}" for c in CAPABILITIES)
        self._producer: dict[str, str] | None = None

    def producer(self) -> dict[str, str]:
        return self._producer or {c: self.endpoints.get(c, "replay") for c in CAPABILITIES}

    def close(self) -> None:
        self._client.close()

    def _post(self, capability: str, body: dict[str, Any]) -> dict[str, Any]:
        route = ROUTES[capability]
        digest = request_digest(route, body)
        if self.cassette is not None and self.cassette.mode == "replay":
            return self.cassette.lookup(route, digest)
        url = self.endpoints[capability].rstrip("/") + route
        timeout = self.timeouts.get(capability, 30.0)
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(url, json=body, timeout=timeout)
            except httpx.HTTPError as exc:
                last = exc
                log.warning("%s attempt %d failed: %s", route, attempt + 1, exc)
                continue
            if resp.status_code >= 500:
                last = RuntimeError(f"HTTP {resp.status_code}")
                log.warning("%s attempt %d: HTTP %d", route, attempt + 1, resp.status_code)
                continue
            if resp.status_code == 422:
                raise EmptyMaskError(f"{route}: {resp.text[:200]}")
            if resp.status_code >= 400:
                raise ProtocolError(f"{route} rejected request: HTTP {resp.status_code} {resp.text[:200]}")
            try:
                payload = resp.json()
            except ValueError as exc:
                raise ProtocolError(f"{route} returned non-JSON body") from exc
            if not isinstance(payload, dict):
                raise ProtocolError(f"{route} returned {type(payload).__name__}, expected object")
            if self.cassette is not None:
                self.cassette.record(route, digest, payload)
            return payload
        raise TransportError(
            f"{route} unreachable after {self.retries + 1} attempts: {last}",
            route=route,
            attempts=self.retries + 1,
        )

    def detect(self, image: np.ndarray, lexicon: Sequence[str]) -> list[Detection]:
        payload = self._post("detect", {"image": b64(encode_png(image)), "lexicon": list(lexicon)})
        try:
            return [
                Detection(str(d["label"]), BBox.from_list(d["bbox"]), float(d["score"]))
                for d in payload["detections"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"/detect response malformed: {exc!r}") from exc

    def segment_box(self, image: np.ndarray, bbox: BBox) -> tuple[RleMask, float]:
        payload = self._post("segment", {"image": b64(encode_png(image)), "bbox": bbox.as_list()})
        try:
            return RleMask.from_dict(payload["mask"]), float(payload["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"/segment response malformed: {exc!r}") from exc

    def describe_region(self, image: np.ndarray, bbox: BBox) -> str:
        payload = self._post("caption", {"image": b64(encode_png(image)), "bbox": bbox.as_list()})
        text = payload.get("description")
        if not isinstance(text, str) or not text.strip():
            raise ProtocolError("/caption returned an empty description")
        return text

    def estimate_depth(self, image: np.ndarray) -> np.ndarray:
        payload = self._post("depth", {"image": b64(encode_png(image))})
        try:
            return decode_depth_png(unb64(payload["depth"]))
        except (KeyError, TypeError, ValueError, OSError) as exc:
            raise ProtocolError(f"/depth response malformed: {exc!r}") from exc
