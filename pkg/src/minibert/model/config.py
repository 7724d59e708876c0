from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    """Encoder hyperparameters. Defaults are desk scale, not BERT-base."""

    num_layers: int = 2
    hidden_size: int = 64
    num_heads: int = 2
    intermediate_size: int = 256
    max_seq_len: int = 64
    vocab_size: int = 300
    type_vocab_size: int = 2
    dropout_rate: float = 0.1
    seed: int = 0
    initializer_range: float = 0.02
    layer_norm_eps: float = 1e-12

    def __post_init__(self) -> None:
        if self.hidden_size % self.num_heads:
            raise ConfigError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        if self.vocab_size < 5:
            raise ConfigError(f"vocab_size must be >= 5, got {self.vocab_size}")
        if self.max_seq_len < 8:
            raise ConfigError(f"max_seq_len must be >= 8, got {self.max_seq_len}")
        if min(self.num_layers, self.hidden_size, self.num_heads, self.intermediate_size, self.type_vocab_size) < 1:
            raise ConfigError(f"sizes must be positive: {self}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def head_size(self) -> int:
        return self.hidden_size // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """The gradient-check configuration."""
        base = dict(
            num_layers=1, hidden_size=8, num_heads=2, intermediate_size=16,
            max_seq_len=12, vocab_size=23, dropout_rate=0.0,
        )
        return cls(**{**base, **overrides})

    @classmethod
    def bert_base(cls, vocab_size: int = 30000, **overrides) -> "ModelConfig":
        """12-block BERT-base shape; constructible for shape tests, far too big to train here."""
        base = dict(
            num_layers=12, hidden_size=768, num_heads=12, intermediate_size=3072,
            max_seq_len=512, vocab_size=vocab_size,
        )
        return cls(**{**base, **overrides})
