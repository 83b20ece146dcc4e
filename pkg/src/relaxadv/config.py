"""INI-style run configuration with strict key checking."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .attack import AttackConfig
from .errors import ConfigError
from .models import ModelConfig


@dataclass(frozen=True)
class CorpusSettings:
    task: str = "cipher"
    vocab_size: int = 64
    n_train: int = 2000
    n_test: int = 200
    min_tokens: int = 10
    max_tokens: int = 20
    seed: int = 0


@dataclass(frozen=True)
class ModelSettings:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ffn_width: int = 128
    max_len: int = 32
    dropout_rate: float = 0.0
    seed: int = 1

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size, self.d_model, self.n_heads, self.n_layers,
                           self.ffn_width, self.max_len, self.dropout_rate)


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 20
    lr: float = 3e-3
    batch_size: int = 32
    seed: int = 0


@dataclass(frozen=True)
class SweepSettings:
    alphas: tuple[float, ...] = (0.0, 1.0, 1e6)


@dataclass(frozen=True)
class PathSettings:
    corpus: str = ""
    nmt: str = ""
    lm: str = ""
    target: str = ""


@dataclass(frozen=True)
class RunConfig:
    corpus: CorpusSettings = field(default_factory=CorpusSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    lm: ModelSettings = field(default_factory=lambda: ModelSettings(seed=2))
    target: ModelSettings = field(default_factory=lambda: ModelSettings(d_model=96, seed=7))
    train: TrainSettings = field(default_factory=TrainSettings)
    attack: AttackConfig = field(default_factory=AttackConfig)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    paths: PathSettings = field(default_factory=PathSettings)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


def _coerce(raw: str, current, where: str):
    try:
        if isinstance(current, bool):
            lowered = raw.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(float(v) for v in raw.replace(",", " ").split())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(current).__name__}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = RunConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]; valid: {', '.join(SECTIONS)}")
        current = getattr(cfg, section)
        known = {f.name for f in fields(current)}
        updates = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]; valid: {', '.join(sorted(known))}")
            updates[key] = _coerce(raw, getattr(current, key), f"{source} [{section}] {key}")
        cfg = replace(cfg, **{section: replace(current, **updates)})
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def with_overrides(cfg: RunConfig, section: str, **values) -> RunConfig:
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    return replace(cfg, **{section: replace(getattr(cfg, section), **values)})
