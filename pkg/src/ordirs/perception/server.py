"""Serve any in-process backend over the perception wire protocol.

Mostly useful for exercising :class:`~ordirs.perception.live.HttpBackend`
against the synthetic world, or for fronting a local model with the same
routes a remote deployment would expose.
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ordirs.dt_core import BBox
from ordirs.errors import EmptyMaskError, OrdirsError
from ordirs.perception.contracts import PerceptionBackend
from ordirs.perception.imaging import b64, decode_png, encode_depth_png, unb64

log = logging.getLogger(__name__)


def _handler(backend: PerceptionBackend):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # route through logging, not stderr
            log.debug(fmt, *args)

        def _reply(self, status: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self):
            try:
                length = int(self.headers.get("Content-Length", 0))
                req = json.loads(self.rfile.read(length))
                image = decode_png(unb64(req["image"]))
            except (ValueError, KeyError, OSError) as exc:
                self._reply(400, {"error": f"bad request: {exc!r}"})
                return
            try:
                if self.path == "/detect":
                    dets = backend.detect(image, req["lexicon"])
                    out = {"detections": [{"label": d.label, "bbox": d.bbox.as_list(), "score": d.score} for d in dets]}
                elif self.path == "/segment":
                    mask, score = backend.segment_box(image, BBox.from_list(req["bbox"]))
                    out = {"mask": mask.to_dict(), "score": score}
                elif self.path == "/caption":
                    out = {"description": backend.describe_region(image, BBox.from_list(req["bbox"]))}
                elif self.path == "/depth":
                    out = {"depth": b64(encode_depth_png(backend.estimate_depth(image)))}
                else:
                    self._reply(404, {"error": f"unknown route {self.path}"})
                    return
            except EmptyMaskError as exc:
                self._reply(422, {"error": str(exc)})
                return
            except OrdirsError as exc:
                self._reply(500, {"error": str(exc)})
                return
            self._reply(200, out)

    return Handler


class PerceptionServer:
    """Background HTTP server; use as a context manager."""

    def __init__(self, backend: PerceptionBackend, host: str = "127.0.0.1", port: int = 0):
        self.httpd = ThreadingHTTPServer((host, port), _handler(backend))
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "PerceptionServer":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
