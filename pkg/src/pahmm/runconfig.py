"""Flat ``key = value`` run configuration and seed derivation."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .core import CONFIG_KEYS, ConfigError, ModelConfig

# keys outside ModelConfig that the commands understand
RUN_KEYS = {
    "model": str,
    "night_start": int,
    "night_end": int,
    "window_len": int,
    "spike_tolerance": int,
    "min_hours": float,
    "min_days": int,
    "hr_mode": str,
    "hr_indicates_wear": bool,
}

_TUPLE_KEYS = {"mu0", "lambda0_diag", "pi"}
_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _model_field_types() -> dict:
    return {f.name: f.type for f in fields(ModelConfig)}


def _parse_bool(key: str, raw: str) -> bool:
    try:
        return _BOOL_WORDS[raw.lower()]
    except KeyError:
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}") from None


def _coerce(key: str, raw: str):
    if raw.lower() in ("none", "null", ""):
        return None
    try:
        if key in _TUPLE_KEYS:
            return tuple(float(v) for v in raw.split(","))
        if key in RUN_KEYS:
            kind = RUN_KEYS[key]
            return _parse_bool(key, raw) if kind is bool else kind(raw)
        kind = _model_field_types()[key]
        if "bool" in str(kind):
            return _parse_bool(key, raw)
        if "int" in str(kind):
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    run: dict = field(default_factory=dict)
    source: Optional[str] = None

    def get(self, key: str, default=None):
        return self.run.get(key, default)


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys raise."""
    model_kw, run_kw = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS and key not in RUN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in model_kw or key in run_kw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        value = _coerce(key, raw)
        (model_kw if key in CONFIG_KEYS else run_kw)[key] = value
    try:
        model = ModelConfig(**model_kw)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return RunConfig(model=model, run=run_kw, source=source)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config_text(text, str(p))


def derive_seed(master: int, component: str, index: int = 0) -> int:
    """Stable 63-bit seed from (master seed, component name, index)."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(component.encode()), int(index)])
    return int(ss.generate_state(2, dtype=np.uint32).astype(np.uint64) @
               np.array([1 << 32, 1], dtype=np.uint64) & np.uint64((1 << 63) - 1))
