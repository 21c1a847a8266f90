"""Model hyper-parameters and ablation toggles."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

from lgk.errors import ConfigError

TOGGLES = ("use_knowledge", "use_kgl", "use_kgda", "use_kgda_gate")


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    n_heads: int = 4
    d_embed: int = 32
    ffn_mult: int = 2
    max_len: int = 32
    n_text: int = 2
    n_pano: int = 1
    n_local: int = 2
    n_global: int = 2
    n_x: int = 2
    k: int = 5
    q_cap: int = 25
    lambda_obj: float = 1.0
    gate_granularity: str = "element"
    use_knowledge: bool = True
    use_kgl: bool = True
    use_kgda: bool = True
    use_kgda_gate: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("d", "n_heads", "d_embed", "ffn_mult", "max_len", "k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("n_text", "n_pano", "n_local", "n_global", "n_x", "q_cap"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if self.d < 2:
            raise ConfigError("d must be >= 2 for layer norm")
        if self.gate_granularity not in ("element", "token"):
            raise ConfigError("gate_granularity must be 'element' or 'token'")
        if self.lambda_obj < 0:
            raise ConfigError("lambda_obj must be non-negative")

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig.from_dict({**self.to_dict(), **changes})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(doc) - set(known))
        if unknown:
            raise ConfigError(f"unknown model config keys: {unknown}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "ModelConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"model config {path}: {exc}") from None

    def toggles(self) -> dict:
        return {t: getattr(self, t) for t in TOGGLES}

    def structure_hash(self) -> str:
        """Hash of everything except the toggles."""
        doc = {k: v for k, v in self.to_dict().items() if k not in TOGGLES}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
