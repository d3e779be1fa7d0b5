"""Language-model client contract, prompt envelope, and cassette wrappers.

Every prompt this package sends ends with a machine-readable envelope::

    SCHEMA: <schema id>
    PAYLOAD:
    ```json
    {...}
    ```

A live model reads the whole prompt; the scripted stand-in only needs the
envelope, which keeps it a pure function of the prompt text.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from pathlib import Path
from typing import Any, Protocol, runtime_checkable

import httpx

from ordirs.errors import CassetteError, ConfigError, ProtocolError, TransportError

log = logging.getLogger(__name__)

API_KEY_ENV = "ORDIRS_LLM_API_KEY"
URL_ENV = "ORDIRS_LLM_URL"
DEFAULT_URL = "https://api.openai.com/v1"


@runtime_checkable
class LlmClient(Protocol):
    identity: str
    deterministic: bool

    def complete(self, prompt: str, schema_id: str) -> str: ...


def render_prompt(instructions: str, schema_id: str, payload: Any) -> str:
    body = json.dumps(payload, indent=1, sort_keys=True, ensure_ascii=False)
    return f"{instructions.strip()}\n\nSCHEMA: {schema_id}\nPAYLOAD:\n```json\n{body}\n```\n"


_ENVELOPE = re.compile(r"SCHEMA: (?P<schema>\S+)\nPAYLOAD:\n```json\n(?P<body>.*)\n```\n?\Z", re.S)


def extract_envelope(prompt: str) -> tuple[str, Any]:
    m = _ENVELOPE.search(prompt)
    if not m:
        raise ProtocolError("prompt has no SCHEMA/PAYLOAD envelope")
    return m.group("schema"), json.loads(m.group("body"))


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.S)


def parse_json_response(text: str) -> Any:
    """Pull a JSON document out of a model reply.

    Accepts a bare document, a fenced ```json block, or prose with one
    embedded object. Raises ``ValueError`` with a readable message otherwise.
    """
    text = text.strip()
    candidates = [text]
    candidates += [m.group(1) for m in _FENCE.finditer(text)]
    first, last = text.find("{"), text.rfind("}")
    if 0 <= first < last:
        candidates.append(text[first : last + 1])
    for cand in candidates:
        try:
            return json.loads(cand)
        except json.JSONDecodeError:
            continue
    raise ValueError("response is not a JSON document")


class LiveLlm:
    """OpenAI-compatible chat-completions client, always at temperature 0."""

    deterministic = False

    def __init__(
        self,
        model: str = "gpt-4o",
        *,
        url: str | None = None,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_concurrency: int = 4,
        client: httpx.Client | None = None,
    ):
        self.api_key = api_key or os.environ.get(API_KEY_ENV)
        if not self.api_key:
            raise ConfigError(f"live LLM needs {API_KEY_ENV} in the environment")
        self.url = (url or os.environ.get(URL_ENV) or DEFAULT_URL).rstrip("/")
        self.model = model
        self.timeout = timeout
        self.identity = f"live:{model}"
        self._client = client or httpx.Client()
        self._gate = threading.BoundedSemaphore(max_concurrency)

    def complete(self, prompt: str, schema_id: str) -> str:
        body = {
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": "Reply with exactly one JSON document and nothing else."},
                {"role": "user", "content": prompt},
            ],
        }
        headers = {"Authorization": f"Bearer {self.api_key}"}
        with self._gate:
            try:
                resp = self._client.post(f"{self.url}/chat/completions", json=body, headers=headers, timeout=self.timeout)
            except httpx.HTTPError as exc:
                raise TransportError(f"LLM request failed: {exc}", route="chat/completions", attempts=1) from exc
        if resp.status_code >= 400:
            raise TransportError(
                f"LLM HTTP {resp.status_code}: {resp.text[:200]}",
                route="chat/completions",
                attempts=1,
                retryable=resp.status_code >= 500 or resp.status_code == 429,
            )
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"unexpected LLM response shape: {exc!r}") from exc


class RecordingLlm:
    """Forward to ``inner`` and append every exchange to a JSONL cassette."""

    def __init__(self, inner: LlmClient, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self.identity = f"recording:{inner.identity}"
        self.deterministic = inner.deterministic
        self._lock = threading.Lock()

    def complete(self, prompt: str, schema_id: str) -> str:
        text = self.inner.complete(prompt, schema_id)
        rec = {"route": schema_id, "request_digest": prompt_digest(prompt), "response": text}
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
        return text


class CassetteLlm:
    """Replay a recorded cassette; prompts must hash to a recorded digest."""

    deterministic = True

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.identity = f"cassette:{self.path.name}"
        self._entries: dict[str, tuple[str, str]] = {}
        if not self.path.exists():
            raise CassetteError(f"cassette {self.path} not found")
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    self._entries[rec["request_digest"]] = (rec["route"], rec["response"])

    def complete(self, prompt: str, schema_id: str) -> str:
        digest = prompt_digest(prompt)
        try:
            route, text = self._entries[digest]
        except KeyError:
            raise CassetteError(f"no recorded {schema_id} response for prompt digest {digest}") from None
        if route != schema_id:
            raise CassetteError(f"digest {digest} was recorded for {route}, requested as {schema_id}")
        return text
