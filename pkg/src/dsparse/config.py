"""Flat run configuration loadable from ``key = value`` files."""

from __future__ import annotations

import typing
from dataclasses import asdict, dataclass, fields, replace

from .kgdata import KnowledgeGraph
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    dim: int = 200
    hidden: int | None = None
    n_experts: int = 3
    temperature: float = 1.0
    sparsity: float = 0.5
    depth: int = 3
    dropout: float = 0.2
    activation: str = "relu"
    use_dynamic: bool = True
    use_relation_aware: bool = True
    residual: bool = True
    encoder: str = "dynamic"
    decoder: str = "residual"
    dropout_placement: str = "before-skip"
    wide_width: int | None = None
    # training
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 100
    label_smoothing: float = 0.1
    weight_decay: float = 0.0
    seed: int = 0
    eval_every: int = 0
    precision: str = "float64"
    runs: int = 1
    # data
    data: str | None = None
    toy: int | None = None
    toy_seed: int = 7

    def model_config(self, kg: KnowledgeGraph) -> ModelConfig:
        keys = {f.name for f in fields(ModelConfig)} - {"n_entities", "n_relations"}
        values = {k: v for k, v in asdict(self).items() if k in keys}
        try:
            return ModelConfig(n_entities=kg.n_entities, n_relations=kg.n_relations, **values)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def train_config(self) -> TrainConfig:
        keys = {f.name for f in fields(TrainConfig)}
        try:
            return TrainConfig(**{k: v for k, v in asdict(self).items() if k in keys})
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def validate(self) -> None:
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.data is None and self.toy is None:
            raise ConfigError("set either data (a dataset directory) or toy (entity count)")
        self.train_config()

    def with_overrides(self, overrides: dict[str, str]) -> RunConfig:
        return replace(self, **{k: coerce(k, v) for k, v in overrides.items()})

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in asdict(self).items())


_HINTS = typing.get_type_hints(RunConfig)


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def coerce(key: str, raw: str):
    if key not in _HINTS:
        raise ConfigError(f"unknown config key {key!r}")
    hint = _HINTS[key]
    args = typing.get_args(hint)
    optional = type(None) in args
    base = next((a for a in args if a is not type(None)), hint) if args else hint
    text = str(raw).strip()
    if optional and text.lower() in ("none", "null", ""):
        return None
    try:
        if base is bool:
            if text.lower() in ("true", "yes", "1", "on"):
                return True
            if text.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        return base(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _HINTS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = value
    return out


def load_run_config(path: str | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = cfg.with_overrides(parse_pairs(fh.read(), path))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg
