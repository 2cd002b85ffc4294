"""Flat INI run configuration with typed sections and strict key checking."""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

SEED_ENV = "DELICATE_SEED"


class RunConfigError(ValueError):
    pass


@dataclass
class RunSection:
    seed: int = 7
    dtype: str = "float32"


@dataclass
class ModelSection:
    hidden_size: int = 64
    num_layers: int = 4
    num_heads: int = 4
    ffn_size: int = 256
    max_seq_len: int = 128
    share_layers: bool = False
    dropout_p: float = 0.1


@dataclass
class PretrainSection:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    warmup_frac: float = 0.05
    max_steps: int = 0                  # 0: no cap


@dataclass
class DistillSection:
    steps: int = 1180
    student_layers: int = 2
    student_share_layers: bool = False
    temperature: float = 8.0
    use_mlm: bool = True
    use_hidn: bool = True
    use_logits: bool = True
    logits_positions: str = "masked"
    lr: float = 1e-3
    batch_size: int = 32
    warmup_frac: float = 0.05


@dataclass
class EvalSection:
    task_kind: str = "classification"
    lr: float = 3e-5
    batch_size: int = 16
    patience: int = 5
    max_epochs: int = 50
    n_folds: int = 3


@dataclass
class PathsSection:
    corpus: str = ""
    vocab: str = ""
    teacher: str = ""
    checkpoint: str = ""
    task: str = ""
    queries: str = ""
    library: str = ""


_SECTIONS = {
    "run": RunSection,
    "model": ModelSection,
    "pretrain": PretrainSection,
    "distill": DistillSection,
    "eval": EvalSection,
    "paths": PathsSection,
}


def _coerce(kind: type, raw: str, where: str) -> Any:
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text, 0)
        if kind is float:
            return float(text)
    except ValueError as exc:
        raise RunConfigError(f"{where}: cannot read {raw!r} as {kind.__name__}") from exc
    return text


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    distill: DistillSection = field(default_factory=DistillSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def set(self, dotted: str, raw: str) -> None:
        """Apply one ``section.key`` override given as text."""
        if "." not in dotted:
            raise RunConfigError(f"override {dotted!r} must look like section.key")
        section, key = dotted.split(".", 1)
        if section not in _SECTIONS:
            raise RunConfigError(f"unknown config section [{section}]")
        obj = getattr(self, section)
        types = {f.name: f.type for f in fields(obj)}
        if key not in types:
            raise RunConfigError(f"unknown key {key!r} in section [{section}]")
        kind = types[key]
        if isinstance(kind, str):
            kind = {"int": int, "float": float, "bool": bool, "str": str}[kind]
        setattr(obj, key, _coerce(kind, raw, f"{section}.{key}"))

    def dumps(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for name in _SECTIONS:
            obj = getattr(self, name)
            parser[name] = {f.name: str(getattr(obj, f.name)) for f in fields(obj)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def resolve_path(self, key: str, base: Path | None = None) -> Path | None:
        value = getattr(self.paths, key)
        if not value:
            return None
        p = Path(value)
        return p if p.is_absolute() or base is None else base / p


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise RunConfigError(f"{source}: {exc}") from exc
    cfg = RunConfig()
    for section in parser.sections():
        for key, value in parser.items(section):
            cfg.set(f"{section}.{key}", value)
    return cfg


def load_config(path: str | Path | None, overrides: list[tuple[str, str]] = (), env=None) -> RunConfig:
    """Defaults, then the file, then ``--section.key`` overrides, then ``DELICATE_SEED``."""
    env = os.environ if env is None else env
    if path is None:
        cfg = RunConfig()
    else:
        p = Path(path)
        if not p.is_file():
            raise RunConfigError(f"config file {p} not found")
        cfg = parse_config(p.read_text(encoding="utf-8"), str(p))
    for key, value in overrides:
        cfg.set(key, value)
    if env.get(SEED_ENV):
        cfg.set("run.seed", env[SEED_ENV])
    return cfg
