"""Flat JSON run configuration with defaults, type checks, and overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .corpus import DEFAULT_SPLIT_RATIO
from .model import EncoderConfig, FusionOption, HeadKind
from .train import REFERENCE_LEARNING_RATE, TrainConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


@dataclass(frozen=True)
class Config:
    learning_rate: float = REFERENCE_LEARNING_RATE
    epochs: int = 5
    batch_size: int = 4
    fusion: str = FusionOption.TEXT_ONLY.value
    head: str = HeadKind.THREE_WAY.value
    use_history: bool = False
    history_len: int = 2
    low_rank: int = 0
    seed: int = 0
    eval_batch_size: int = 256
    proj_dim: int = 256
    text_dim: int = 64
    text_layers: int = 2
    text_heads: int = 4
    max_len: int = 128
    split_ratio: tuple = DEFAULT_SPLIT_RATIO
    lexicon_size: int = 20
    on_error: str = "warn"

    def train_config(self, frame_dim: int = 16) -> TrainConfig:
        enc = EncoderConfig(frame_dim=frame_dim, proj_dim=self.proj_dim, text_dim=self.text_dim,
                            text_layers=self.text_layers, text_heads=self.text_heads, max_len=self.max_len)
        return TrainConfig(
            learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
            fusion=FusionOption(self.fusion), head=HeadKind(self.head), use_history=self.use_history,
            history_len=self.history_len, low_rank=self.low_rank, seed=self.seed,
            eval_batch_size=self.eval_batch_size, encoder=enc,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["split_ratio"] = list(self.split_ratio)
        return d


_TYPES = {f.name: f.type for f in fields(Config)}
_POSITIVE = {"epochs", "batch_size", "eval_batch_size", "proj_dim", "text_dim", "text_layers",
             "text_heads", "max_len", "lexicon_size"}
_NON_NEGATIVE = {"history_len", "low_rank"}
_CHOICES = {
    "fusion": {o.value for o in FusionOption},
    "head": {h.value for h in HeadKind},
    "on_error": {"warn", "raise"},
}


def _coerce(key: str, value: Any) -> Any:
    kind = _TYPES[key]
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected bool, got {type(value).__name__}")
    elif kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected int, got {type(value).__name__}")
    elif kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected float, got {type(value).__name__}")
        value = float(value)
    elif kind == "str":
        if not isinstance(value, str):
            raise ConfigError(key, f"expected str, got {type(value).__name__}")
    elif kind == "tuple":
        if (not isinstance(value, (list, tuple)) or len(value) != 3
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) and x >= 0 for x in value)
                or sum(value) <= 0):
            raise ConfigError(key, "expected a list of three non-negative numbers")
        value = tuple(value)
    return value


def validate(values: dict) -> Config:
    clean = {}
    for key, value in values.items():
        if key not in _TYPES:
            raise ConfigError(key, "unknown key")
        value = _coerce(key, value)
        if key in _POSITIVE and value < 1:
            raise ConfigError(key, "must be >= 1")
        if key in _NON_NEGATIVE and value < 0:
            raise ConfigError(key, "must be >= 0")
        if key == "learning_rate" and value < 0:
            raise ConfigError(key, "must be >= 0")
        if key in _CHOICES and value not in _CHOICES[key]:
            raise ConfigError(key, f"must be one of {sorted(_CHOICES[key])}")
        clean[key] = value
    return Config(**clean)


def load_config(path: str | Path | None, overrides: dict | None = None) -> Config:
    """Defaults < file values < overrides (None-valued overrides are ignored)."""
    values: dict = {}
    if path is not None:
        text = Path(path).read_text()
        if text.strip():
            try:
                values = json.loads(text)
            except json.JSONDecodeError as e:
                raise ConfigError("<file>", f"invalid JSON: {e}") from e
            if not isinstance(values, dict):
                raise ConfigError("<file>", "top level must be a JSON object")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return validate(values)


def dump_config(config: Config, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=1, sort_keys=True) + "\n")
