"""Training configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # defaults are the paper-scale values; see DESK_OVERRIDES
    encoder_lr: float = 2e-3
    decoder_lr: float = 2e-1
    encoder_warmup_steps: int = 20000
    decoder_warmup_steps: int = 10000
    total_steps: int = 200000
    alpha: float = 1.0
    beta: float = 1.0
    rho: float = 0.7
    max_neighbors: int = 16
    source_token_budget: int = 1240
    per_ref_token_budget: int = 100
    checkpoint_every: int = 200
    rng_seed: int = 0
    scale: str = "paper"
    # instance construction
    negative_documents: int = 4
    negative_tokens: int = 32
    max_sentences: int = 7
    max_summary_length: int = 300
    batch_size: int = 8
    contrastive: bool = True
    # model
    model_dim: int = 768
    encoder_layers: int = 12
    decoder_layers: int = 6
    attention_heads: int = 8
    feedforward_dim: int = 2048
    encoder_dropout: float = 0.1
    decoder_dropout: float = 0.4
    # decoding
    decode_strategy: str = "greedy"
    beam_width: int = 4

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.scale not in ("desk", "paper"):
            raise ConfigError(f"scale must be desk or paper, got {self.scale!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must lie in [0, 1]")
        for name in ("encoder_lr", "decoder_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("encoder_warmup_steps", "decoder_warmup_steps", "total_steps", "max_neighbors",
                     "source_token_budget", "per_ref_token_budget", "checkpoint_every", "max_sentences",
                     "max_summary_length", "batch_size", "model_dim", "encoder_layers", "decoder_layers",
                     "attention_heads", "feedforward_dim", "beam_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("negative_documents", "negative_tokens", "alpha", "beta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.model_dim % self.attention_heads:
            raise ConfigError("model_dim must be divisible by attention_heads")
        if self.decode_strategy not in ("greedy", "beam"):
            raise ConfigError("decode_strategy must be greedy or beam")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_dict().items())

    @property
    def max_positions(self) -> int:
        return max(self.source_token_budget, self.per_ref_token_budget, self.max_summary_length + 1)


DESK_OVERRIDES = dict(
    encoder_lr=0.05,
    decoder_lr=0.05,
    encoder_warmup_steps=100,
    decoder_warmup_steps=100,
    total_steps=2000,
    source_token_budget=128,
    per_ref_token_budget=32,
    max_summary_length=48,
    model_dim=64,
    encoder_layers=2,
    decoder_layers=2,
    attention_heads=4,
    feedforward_dim=128,
)

FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def make_config(scale: str = "desk", **overrides) -> TrainConfig:
    """Config for ``scale`` with explicit overrides applied on top."""
    base = dict(DESK_OVERRIDES) if scale == "desk" else {}
    base.update(overrides)
    unknown = set(base) - set(FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(scale=scale, **base)


def _format(v) -> str:
    return str(v).lower() if isinstance(v, bool) else str(v)


def parse_value(key: str, raw: str):
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = parse_value(key, raw)
    return values


def load_config(path, **overrides) -> TrainConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8"))
    values.update(overrides)
    scale = values.pop("scale", "desk")
    return make_config(scale, **values)


def lr_multiplier(step: int, warmup: int) -> float:
    """Linear warm-up then inverse square-root decay: min(step^-0.5, step * warmup^-1.5)."""
    if step <= 0:
        return 0.0
    return min(step ** -0.5, step * warmup ** -1.5)
