"""Named parameter storage, seeded initialisation and JSON checkpoints."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from lgk.autodiff.tensor import Tensor
from lgk.errors import ValidationError


def glorot_uniform(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        fan_in, fan_out = shape[0], shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParamStore:
    """Ordered mapping ``name -> Tensor(requires_grad=True)``.

    Insertion order is the canonical order for checkpoints and updates.
    """

    def __init__(self, seed: int = 0):
        self._params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(seed)

    def add(self, name: str, shape: tuple, init: str = "glorot") -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        shape = tuple(int(s) for s in shape)
        if init == "glorot":
            data = glorot_uniform(self._rng, shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def names(self) -> list[str]:
        return list(self._params)

    def num_scalars(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def to_dict(self) -> dict:
        return {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in self._params.items()
        }

    def load_dict(self, payload: dict) -> None:
        """Overwrite values in place; names and shapes must match exactly."""
        missing = [n for n in self._params if n not in payload]
        extra = [n for n in payload if n not in self._params]
        if missing or extra:
            raise ValidationError(f"checkpoint mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, t in self._params.items():
            entry = payload[name]
            shape = tuple(entry.get("shape", ()))
            if shape != t.shape:
                raise ValidationError(f"checkpoint shape for {name!r}: {shape} != {t.shape}")
            data = np.asarray(entry["data"], dtype=np.float64)
            if data.size != t.data.size:
                raise ValidationError(f"checkpoint data for {name!r} has {data.size} values, expected {t.data.size}")
            if not np.isfinite(data).all():
                raise ValidationError(f"checkpoint data for {name!r} is not finite")
            t.data[...] = data.reshape(shape)


def save_checkpoint(params: ParamStore, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict()), encoding="utf-8")


def load_checkpoint(params: ParamStore, path) -> None:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"checkpoint {path} is not valid JSON: {exc}") from None
    params.load_dict(payload)
