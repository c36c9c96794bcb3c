"""Engine configuration: defaults, flat key=value config files, ENGINE_* env
overrides, and CLI flag precedence (flag > env > file > default)."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from typing import Any, Mapping, Optional

from .errors import DataError, ParseError

ENV_PREFIX = "ENGINE_"


@dataclass
class ReasonerConfig:
    max_depth: int = 3
    k_nodes: int = 10
    k_triples: int = 10
    k_answers: int = 50
    beam_width: int = 32
    top_m_relations: int = 1
    relation_filter: bool = True
    allow_revisit: bool = False
    seed: int = 0
    epochs: int = 100
    learning_rate: float = 1e-4
    lr_decay: float = 0.9
    embedding_dim: int = 64
    adapter_enabled: bool = False
    predictor_hidden: int = 256
    predictor_rel_dim: int = 64
    predictor_step_dim: int = 64
    threads: int = 1

    def validate(self) -> "ReasonerConfig":
        counts = (
            "max_depth",
            "k_nodes",
            "k_triples",
            "k_answers",
            "beam_width",
            "top_m_relations",
            "predictor_hidden",
            "predictor_rel_dim",
            "predictor_step_dim",
            "threads",
        )
        for name in counts:
            if getattr(self, name) < 1:
                raise DataError(f"config {name} must be >= 1")
        if self.epochs < 0:
            raise DataError("config epochs must be >= 0")
        if self.learning_rate <= 0:
            raise DataError("config learning_rate must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise DataError("config lr_decay must be in (0, 1]")
        if self.embedding_dim < 2:
            raise DataError("config embedding_dim must be >= 2")
        return self


def _parse_value(name: str, raw: str, target_type: type) -> Any:
    raw = raw.strip()
    if target_type is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise DataError(f"config {name}: expected a boolean, got {raw!r}")
    try:
        return target_type(raw)
    except ValueError:
        raise DataError(f"config {name}: expected {target_type.__name__}, got {raw!r}") from None


def parse_config_file(path: str) -> dict[str, str]:
    """Flat "key = value" file; '#' starts a comment; blank lines ignored."""
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open config file {path}: {exc.strerror}") from None
    entries: dict[str, str] = {}
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip()
            if not key:
                raise ParseError(f"{path}:{lineno}: empty key")
            entries[key] = value.strip()
    return entries


def build_config(
    file_path: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    env: Optional[Mapping[str, str]] = None,
) -> ReasonerConfig:
    """Resolve the effective config: defaults, then file, then ENGINE_* env
    vars, then explicit overrides (CLI flags)."""
    cfg = ReasonerConfig()
    field_types = {f.name: f.type for f in fields(ReasonerConfig)}
    types = {
        name: (bool if "bool" in str(t) else float if "float" in str(t) else int)
        for name, t in field_types.items()
    }
    if file_path is not None:
        for key, raw in parse_config_file(file_path).items():
            if key not in types:
                raise DataError(f"unknown config key {key!r} in {file_path}")
            setattr(cfg, key, _parse_value(key, raw, types[key]))
    env = os.environ if env is None else env
    for name, t in types.items():
        raw = env.get(ENV_PREFIX + name.upper())
        if raw is not None:
            setattr(cfg, name, _parse_value(name, raw, t))
    if overrides:
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in types:
                raise DataError(f"unknown config key {key!r}")
            setattr(cfg, key, value)
    return cfg.validate()


def render_config(cfg: ReasonerConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(ReasonerConfig)]
    return "\n".join(lines)
