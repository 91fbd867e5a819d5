"""Model hyperparameters and CLI run configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    d_ff: int = 128
    delta_anc: int = 5
    delta_sib: int = 5
    src_vocab: int = 4
    tgt_vocab: int = 4
    max_len: int = 32
    dropout: float = 0.0
    seed: int = 0
    lr: float = 1e-3

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("d_model", "n_heads", "enc_layers", "dec_layers", "d_ff", "src_vocab", "tgt_vocab", "max_len"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
        if self.n_heads % 2:
            raise ConfigError(f"n_heads must be even (half ancestor, half sibling heads), got {self.n_heads}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        for name in ("delta_anc", "delta_sib"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {unknown}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI run needs; a flat JSON object of these keys, all optional."""

    model: ModelConfig = ModelConfig()
    data: Optional[str] = None
    checkpoint: Optional[str] = None
    out: Optional[str] = None
    traversal: str = "pot"
    beam: Optional[int] = None
    batch_size: int = 8
    epochs: int = 300
    patience: int = 10
    min_freq: int = 1

    def __post_init__(self):
        if self.traversal not in ("pot", "sbt"):
            raise ConfigError(f"traversal must be 'pot' or 'sbt', got {self.traversal!r}")
        for name in ("batch_size", "epochs", "patience", "min_freq"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
        if self.beam is not None and (not isinstance(self.beam, int) or self.beam < 1):
            raise ConfigError(f"beam must be an integer >= 1, got {self.beam!r}")

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("run config must be a JSON object")
        model_keys = {f.name for f in fields(ModelConfig)}
        run_keys = {f.name for f in fields(cls)} - {"model"}
        unknown = sorted(set(obj) - model_keys - run_keys)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        model = ModelConfig.from_dict({k: v for k, v in obj.items() if k in model_keys})
        try:
            return cls(model=model, **{k: v for k, v in obj.items() if k in run_keys})
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        out = self.model.to_dict()
        out.update({f.name: getattr(self, f.name) for f in fields(self) if f.name != "model"})
        return out

    def override(self, **changes) -> "RunConfig":
        """Copy with non-None ``changes`` applied; model keys go to the model config."""
        merged = self.to_dict()
        merged.update({k: v for k, v in changes.items() if v is not None})
        return RunConfig.from_dict(merged)
