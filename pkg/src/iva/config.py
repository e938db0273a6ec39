"""Model hyperparameters and their JSON forms."""
import json
from dataclasses import asdict, dataclass

from .errors import ConfigError, DomainError


@dataclass
class IvaConfig:
    lq: int = 16          # number of dynamic query tokens
    ni: int = 8           # number of injection points
    tau: float = 0.5      # selector temperature
    d_m: int = 64
    d_s: int = None       # selector/interactor width, d_m // 2 when unset
    iva_depth: int = 4    # stacked (selector, interactor) pairs per injection
    layers: int = 8       # decoder layers of the host model

    def __post_init__(self):
        if self.d_s is None:
            self.d_s = max(1, self.d_m // 2)
        if self.lq < 1:
            raise DomainError(f"lq must be >= 1, got {self.lq}")
        if not 1 <= self.ni <= self.layers:
            raise DomainError(f"ni must be in [1, layers={self.layers}], got {self.ni}")
        if self.tau <= 0:
            raise DomainError(f"tau must be > 0, got {self.tau}")
        if self.iva_depth < 1:
            raise DomainError(f"iva_depth must be >= 1, got {self.iva_depth}")

    def to_json(self):
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


@dataclass
class HostConfig:
    vocab_size: int = 128
    d_m: int = 64
    layers: int = 8
    heads: int = 4
    max_seq_len: int = 256
    tied_embeddings: bool = False

    def __post_init__(self):
        if self.d_m % self.heads:
            raise DomainError(f"d_m={self.d_m} not divisible by heads={self.heads}")
        if self.layers < 1 or self.vocab_size < 1 or self.max_seq_len < 1:
            raise DomainError("layers, vocab_size and max_seq_len must be >= 1")


@dataclass
class TokenizerConfig:
    d_v: int = 32
    d_m: int = 64
    ct_layers: int = 4
    ct_heads: int = 4

    def __post_init__(self):
        if self.d_v % self.ct_heads:
            raise DomainError(f"d_v={self.d_v} not divisible by ct_heads={self.ct_heads}")


@dataclass
class ModelConfig:
    host: HostConfig
    tokenizer: TokenizerConfig
    iva: IvaConfig

    def __post_init__(self):
        if not (self.host.d_m == self.tokenizer.d_m == self.iva.d_m):
            raise ConfigError(
                f"d_m disagrees: host {self.host.d_m}, tokenizer {self.tokenizer.d_m}, iva {self.iva.d_m}"
            )
        if self.iva.layers != self.host.layers:
            raise ConfigError(f"iva.layers={self.iva.layers} != host.layers={self.host.layers}")

    @classmethod
    def build(cls, *, vocab_size=128, d_m=64, layers=8, heads=4, max_seq_len=256, d_v=32,
              ct_heads=4, ct_layers=4, lq=16, ni=2, tau=0.5, d_s=None, iva_depth=4,
              tied_embeddings=False):
        return cls(
            HostConfig(vocab_size, d_m, layers, heads, max_seq_len, tied_embeddings),
            TokenizerConfig(d_v, d_m, ct_layers, ct_heads),
            IvaConfig(lq, ni, tau, d_m, d_s, iva_depth, layers),
        )

    def to_dict(self):
        return {"host": asdict(self.host), "tokenizer": asdict(self.tokenizer), "iva": asdict(self.iva)}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(HostConfig(**d["host"]), TokenizerConfig(**d["tokenizer"]), IvaConfig(**d["iva"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad model config: {exc}") from exc

