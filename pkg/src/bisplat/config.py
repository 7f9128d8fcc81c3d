"""Run configuration merged from a key=value file, BISPLAT_ environment variables and flags.

Precedence: flags > environment > file > defaults. Keys are ``section.name``;
the environment form of ``train.lr_networks`` is ``BISPLAT_TRAIN_LR_NETWORKS``.
"""
from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Mapping

ENV_PREFIX = "BISPLAT_"


class ConfigKeyError(KeyError):
    def __init__(self, key: str, source: str):
        self.key = key
        super().__init__(f"unknown configuration key {key!r} (from {source})")

    def __str__(self):
        return self.args[0]


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _list(v) -> list[str]:
    if isinstance(v, (list, tuple)):
        return [str(x) for x in v]
    return [s.strip() for s in str(v).split(",") if s.strip()]


SCHEMA: dict[str, tuple[type | Any, Any]] = {
    "model.profile": (str, "base"),
    "model.n_primitives": (int, None),
    "train.steps": (int, 30000),
    "train.seed": (int, 0),
    "train.lr_networks": (float, 1e-3),
    "train.lr_positions": (float, 2e-3),
    "train.lr_shape": (float, 5e-3),
    "train.lr_opacity": (float, 5e-2),
    "train.eval_every": (int, 0),
    "train.bypass": (_list, []),
    "raster.tile": (int, 16),
    "raster.culling": (_bool, True),
    "runtime.workers": (int, None),
}


def env_key(key: str) -> str:
    return ENV_PREFIX + key.replace(".", "_").upper()


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source} line {lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def _coerce(key: str, value, source: str):
    if key not in SCHEMA:
        raise ConfigKeyError(key, source)
    conv, _ = SCHEMA[key]
    if value is None:
        return None
    try:
        return conv(value)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"bad value {value!r} for {key} (from {source}): {exc}") from None


def load_run_config(path=None, env: Mapping[str, str] | None = None,
                    flags: Mapping[str, Any] | None = None, defaults: bool = True) -> dict[str, Any]:
    """Merged settings; with ``defaults=False`` only explicitly set keys are returned."""
    cfg = {k: default for k, (_, default) in SCHEMA.items()} if defaults else {}
    if path is not None:
        p = Path(path)
        for k, v in parse_kv_text(p.read_text(), str(p)).items():
            cfg[k] = _coerce(k, v, str(p))
    env = os.environ if env is None else env
    by_env = {env_key(k): k for k in SCHEMA}
    for name, v in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        if name not in by_env:
            raise ConfigKeyError(name, "environment")
        cfg[by_env[name]] = _coerce(by_env[name], v, "environment")
    for k, v in (flags or {}).items():
        if v is not None:
            cfg[k] = _coerce(k, v, "command line")
    return cfg
