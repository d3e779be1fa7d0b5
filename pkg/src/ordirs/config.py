"""Application configuration: YAML file, then environment, then command-line flags."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from ordirs.errors import ConfigError
from ordirs.llm import API_KEY_ENV
from ordirs.perception.contracts import CAPABILITIES, PipelineConfig
from ordirs.spatial import Zone
from ordirs.synth_world.backend import NoiseConfig

BACKENDS = ("live", "synthetic")
LLM_MODES = ("scripted", "live", "replay")

# environment variable -> config key
ENV_KEYS = {
    "ORDIRS_BACKEND": "backend",
    "ORDIRS_FPS": "fps",
    "ORDIRS_JOBS": "jobs",
    "ORDIRS_LLM": "llm_mode",
    "ORDIRS_LLM_MODEL": "llm_model",
    "ORDIRS_LLM_URL": "llm_url",
    "ORDIRS_LLM_RULES": "llm_rules",
    "ORDIRS_LLM_CASSETTE": "llm_cassette",
}
ENDPOINT_ENV_PREFIX = "ORDIRS_ENDPOINT_"  # e.g. ORDIRS_ENDPOINT_DETECT


@dataclass(frozen=True)
class AppConfig:
    backend: str = "synthetic"
    endpoints: Mapping[str, str] = field(default_factory=dict)
    timeouts: Mapping[str, float] = field(default_factory=dict)
    llm_mode: str = "scripted"
    llm_model: str = "gpt-4o"
    llm_url: str | None = None
    llm_concurrency: int = 4
    llm_rules: str | None = None
    llm_cassette: str | None = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    fps: float = 1.0
    zones: Mapping[str, Zone] = field(default_factory=dict)
    jobs: int = 1
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.llm_mode not in LLM_MODES:
            raise ConfigError(f"llm mode must be one of {LLM_MODES}, got {self.llm_mode!r}")
        if self.fps <= 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.llm_concurrency < 1:
            raise ConfigError("llm concurrency must be >= 1")

    def check_live(self, env: Mapping[str, str] = os.environ) -> None:
        """Invariants that only matter when live services are actually used."""
        if self.backend == "live":
            missing = [c for c in CAPABILITIES if c not in self.endpoints]
            if missing:
                raise ConfigError(f"live backend needs endpoints for {missing}")
        if self.llm_mode == "live" and not env.get(API_KEY_ENV):
            raise ConfigError(f"live LLM mode needs {API_KEY_ENV} in the environment")


_NESTED = ("endpoints", "timeouts", "pipeline", "noise")
_SCALARS = {"backend": str, "fps": float, "jobs": int, "llm_mode": str, "llm_model": str, "llm_url": str,
            "llm_rules": str, "llm_cassette": str, "llm_concurrency": int}


def _flatten_file(doc: Mapping[str, Any]) -> dict[str, Any]:
    """Map the nested file layout onto flat config keys."""
    known = {"backend", "endpoints", "timeouts", "llm", "pipeline", "fps", "zones", "jobs", "noise"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    flat: dict[str, Any] = {k: doc[k] for k in ("backend", "endpoints", "timeouts", "fps", "jobs") if k in doc}
    llm = doc.get("llm") or {}
    bad = set(llm) - {"mode", "model", "url", "concurrency", "rules", "cassette", "temperature"}
    if bad:
        raise ConfigError(f"unknown llm keys: {sorted(bad)}")
    if llm.get("temperature", 0) != 0:
        raise ConfigError("llm temperature is fixed at 0")
    for k in ("mode", "model", "url", "concurrency", "rules", "cassette"):
        if k in llm:
            flat[f"llm_{k}"] = llm[k]
    if "pipeline" in doc:
        flat["pipeline"] = dict(doc["pipeline"])
    if "zones" in doc:
        flat["zones"] = doc["zones"]
    if "noise" in doc:
        flat["noise"] = dict(doc["noise"])
    return flat


def _from_env(env: Mapping[str, str]) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for var, key in ENV_KEYS.items():
        if env.get(var):
            flat[key] = env[var]
    eps = {var[len(ENDPOINT_ENV_PREFIX):].lower(): v for var, v in env.items() if var.startswith(ENDPOINT_ENV_PREFIX) and v}
    if eps:
        flat["endpoints"] = eps
    return flat


def _build(flat: Mapping[str, Any]) -> AppConfig:
    kwargs: dict[str, Any] = {}
    try:
        for key, value in flat.items():
            if value is None:
                continue
            if key in _SCALARS:
                kwargs[key] = _SCALARS[key](value)
            elif key in ("endpoints", "timeouts"):
                kwargs[key] = dict(value)
            elif key == "pipeline":
                allowed = {f.name for f in fields(PipelineConfig)} - {"endpoints", "timeouts"}
                bad = set(value) - allowed
                if bad:
                    raise ConfigError(f"unknown pipeline keys: {sorted(bad)}")
                kwargs["pipeline"] = PipelineConfig(**value)
            elif key == "zones":
                kwargs["zones"] = {n: Zone(n, tuple((float(x), float(y)) for x, y in pts)) for n, pts in value.items()}
            elif key == "noise":
                kwargs["noise"] = NoiseConfig(**value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    cfg = AppConfig(**kwargs)
    if cfg.endpoints or cfg.timeouts:
        cfg = replace(cfg, pipeline=replace(cfg.pipeline, endpoints=dict(cfg.endpoints), timeouts=dict(cfg.timeouts)))
    return cfg


def load_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> AppConfig:
    """Merge file < environment < ``overrides`` (command-line flags)."""
    env = os.environ if env is None else env
    flat: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} not found")
        try:
            doc = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        if not isinstance(doc, Mapping):
            raise ConfigError(f"{p}: expected a mapping at top level")
        flat.update(_flatten_file(doc))
    for layer in (_from_env(env), {k: v for k, v in (overrides or {}).items() if v is not None}):
        for key, value in layer.items():
            if key in _NESTED and isinstance(flat.get(key), Mapping):
                value = {**flat[key], **value}
            flat[key] = value
    return _build(flat)
