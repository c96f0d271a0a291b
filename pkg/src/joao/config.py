"""Run configuration: flat ``key = value`` files plus command-line overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .optim import JoaoConfig
from .rng import resolve_seed

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}

RUN_KEYS = ("data", "name", "out", "checkpoint_every", "threads")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` per line; ``#`` starts a comment; keys may use dashes."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def read_config_file(path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from None
    return parse_config_text(text, str(p))


def _coerce(name: str, typ, value):
    if value is None or not isinstance(value, str):
        return value
    try:
        if typ in (bool, "bool"):
            v = value.strip().lower()
            if v in _BOOL_TRUE:
                return True
            if v in _BOOL_FALSE:
                return False
            raise ValueError(value)
        if typ in (int, "int"):
            return int(value)
        if typ in (float, "float"):
            return float(value)
    except ValueError:
        raise ConfigError(f"{name}: cannot interpret {value!r} as {getattr(typ, '__name__', typ)}") from None
    return value


_JOAO_TYPES = {f.name: f.type for f in dataclasses.fields(JoaoConfig)}


@dataclass
class RunConfig:
    joao: JoaoConfig = field(default_factory=JoaoConfig)
    data: str | None = None
    name: str | None = None
    out: str = "runs/latest"
    checkpoint_every: int = 0
    threads: int | None = None

    @property
    def dataset_name(self) -> str:
        if self.name:
            return self.name
        return Path(self.data).resolve().name if self.data else ""

    def problems(self, require_data: bool = True) -> list[str]:
        probs = self.joao.problems()
        if require_data:
            if not self.data:
                probs.append("data: no dataset directory given")
            elif not Path(self.data).is_dir():
                probs.append(f"data: directory not found: {self.data}")
        if self.checkpoint_every < 0:
            probs.append(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if self.threads is not None and self.threads < 1:
            probs.append(f"threads must be >= 1, got {self.threads}")
        out = Path(self.out)
        parent = out if out.exists() else out.parent
        while not parent.exists() and parent != parent.parent:
            parent = parent.parent
        if out.exists() and not out.is_dir():
            probs.append(f"out: {out} exists and is not a directory")
        elif not os.access(parent, os.W_OK):
            probs.append(f"out: {parent} is not writable")
        return probs

    def validate(self, require_data: bool = True) -> "RunConfig":
        probs = self.problems(require_data)
        if probs:
            raise ConfigError("; ".join(probs))
        return self

    def to_record(self) -> dict:
        """Effective configuration as echoed into the run log (output location excluded)."""
        return {"data": self.data, "name": self.dataset_name, "checkpoint_every": self.checkpoint_every,
                **self.joao.to_record()}


def build_run_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults < config file < overrides; seed falls back to ``$JOAO_SEED``."""
    merged: dict = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(merged) - set(_JOAO_TYPES) - set(RUN_KEYS))
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")

    jkw = {}
    for name, typ in _JOAO_TYPES.items():
        if name in merged and name != "pool":
            jkw[name] = _coerce(name, typ, merged[name])
    if "pool" in merged:
        jkw["pool"] = merged["pool"]
    try:
        jkw["seed"] = resolve_seed(jkw.get("seed"))
    except ValueError:
        raise ConfigError("JOAO_SEED must be an integer") from None
    joao = JoaoConfig(**jkw)

    threads = merged.get("threads")
    return RunConfig(
        joao=joao,
        data=merged.get("data"),
        name=merged.get("name"),
        out=merged.get("out", "runs/latest"),
        checkpoint_every=_coerce("checkpoint_every", int, merged.get("checkpoint_every", 0)),
        threads=None if threads is None else _coerce("threads", int, threads),
    )
