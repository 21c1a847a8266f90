"""Differentiable operations on :class:`~lgk.autodiff.tensor.Tensor`.

Each op computes its forward value with numpy and, when recorded, stores a
closure returning one gradient per input (``None`` for inputs that take
no gradient).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from lgk.autodiff.tensor import Tensor, make
from lgk.errors import ConfigError, DegenerateRowError, DimensionError

MASK_FILL = -1.0e30


def _check_2d(name: str, *ts: Tensor) -> None:
    for t in ts:
        if t.ndim != 2:
            raise DimensionError(f"{name}: expected 2-D tensor, got shape {t.shape}")


def _bias_ok(a: Tensor, b: Tensor) -> bool:
    return b.ndim == 1 and a.shape[-1] == b.shape[0]


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        return make("add", a.data + b.data, (a, b), lambda g: (g, g))
    if _bias_ok(a, b) and a.ndim > 1:
        axes = tuple(range(a.ndim - 1))
        return make("add_bias", a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)))
    raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        return make("sub", a.data - b.data, (a, b), lambda g: (g, -g))
    if _bias_ok(a, b) and a.ndim > 1:
        axes = tuple(range(a.ndim - 1))
        return make("sub_bias", a.data - b.data, (a, b), lambda g: (g, -g.sum(axis=axes)))
    raise DimensionError(f"sub: incompatible shapes {a.shape} and {b.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes differ {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return make("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return make("scale", a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return make("add_scalar", a.data + c, (a,), lambda g: (g,))


def rsub_scalar(c: float, a: Tensor) -> Tensor:
    """``c - a``."""
    return make("rsub_scalar", c - a.data, (a,), lambda g: (-g,))


def scalar_mul(s: Tensor, a: Tensor) -> Tensor:
    """Multiply every entry of ``a`` by the single value held in ``s``."""
    if s.data.size != 1:
        raise DimensionError(f"scalar_mul: gate must have one element, got {s.shape}")
    sv = float(s.data.reshape(-1)[0])
    ad = a.data
    sshape = s.shape

    def bw(g):
        return (np.array(np.sum(g * ad)).reshape(sshape), g * sv)

    return make("scalar_mul", ad * sv, (s, a), bw)


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return make("relu", np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # two-branch form keeps exp() argument non-positive
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    # round toward the open interval: float64 would otherwise return exactly 1.0 past ~37
    out = np.clip(out, _SIG_LO, _SIG_HI)
    return make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


# ---------------------------------------------------------------- reductions / layout


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return make("sum", np.array([a.data.sum()]), (a,), lambda g: (np.full(shape, g[0]),))


def mean_rows(a: Tensor, start: int = 0, stop: int | None = None) -> Tensor:
    """Mean of rows ``start:stop`` of a 2-D tensor, as a ``[1 x d]`` row."""
    _check_2d("mean_rows", a)
    stop = a.shape[0] if stop is None else stop
    n = stop - start
    if n <= 0 or start < 0 or stop > a.shape[0]:
        raise DimensionError(f"mean_rows: bad span [{start},{stop}) for {a.shape[0]} rows")
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[start:stop] = g / n
        return (out,)

    return make("mean_rows", a.data[start:stop].mean(axis=0, keepdims=True), (a,), bw)


def take_rows(a: Tensor, idx: Sequence[int]) -> Tensor:
    _check_2d("take_rows", a)
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return make("take_rows", a.data[idx], (a,), bw)


def gather(a: Tensor, idx: Sequence[int]) -> Tensor:
    """1-D tensor of entries of flattened ``a`` at ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    shape, size = a.shape, a.data.size

    def bw(g):
        out = np.zeros(size)
        np.add.at(out, idx, g)
        return (out.reshape(shape),)

    return make("gather", a.data.reshape(-1)[idx], (a,), bw)


def concat_rows(ts: Sequence[Tensor]) -> Tensor:
    _check_2d("concat_rows", *ts)
    sizes = [t.shape[0] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=0))

    return make("concat_rows", np.concatenate([t.data for t in ts], axis=0), tuple(ts), bw)


def concat_cols(ts: Sequence[Tensor]) -> Tensor:
    _check_2d("concat_cols", *ts)
    sizes = [t.shape[1] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=1))

    return make("concat_cols", np.concatenate([t.data for t in ts], axis=1), tuple(ts), bw)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    return make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    _check_2d("transpose", a)
    return make("transpose", np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return make("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with ``b`` broadcast over rows."""
    _check_2d("linear", x, w)
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear: input width {x.shape[1]} vs weight {w.shape}")
    xd, wd = x.data, w.data
    if b is None:
        return make("linear", xd @ wd, (x, w), lambda g: (g @ wd.T, xd.T @ g))
    if b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias shape {b.shape} vs weight {w.shape}")
    return make(
        "linear",
        xd @ wd + b.data,
        (x, w, b),
        lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)),
    )


# ---------------------------------------------------------------- normalisers


def _masked_softmax(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is not None:
        if not mask.any(axis=-1).all():
            raise DegenerateRowError("softmax row has no unmasked entry")
        x = np.where(mask, x, MASK_FILL)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_mask(mask, shape) -> np.ndarray | None:
    if mask is None:
        return None
    if isinstance(mask, Tensor):
        mask = mask.data != 0
    mask = np.asarray(mask, dtype=bool)
    try:
        return np.broadcast_to(mask, shape)
    except ValueError:
        raise DimensionError(f"mask shape {mask.shape} does not fit {shape}") from None


def softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Row-wise softmax; ``mask`` (True = keep) zeroes excluded entries."""
    _check_2d("softmax_rows", x)
    m = _as_mask(mask, x.shape)
    p = _masked_softmax(x.data, m)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return make("softmax_rows", p, (x,), bw)


def cross_entropy(logits: Tensor, target: int, mask=None) -> Tensor:
    """``-log softmax(logits)[target]`` for a 1-D logit vector."""
    flat = logits.data.reshape(-1)
    n = flat.shape[0]
    if not 0 <= target < n:
        raise DimensionError(f"cross_entropy: target {target} outside {n} logits")
    m = None if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    if m is not None and not m[target]:
        raise DimensionError("cross_entropy: target is masked out")
    x = flat if m is None else np.where(m, flat, MASK_FILL)
    z = x - x.max()
    e = np.exp(z)
    tot = e.sum()
    p = e / tot
    loss = math.log(tot) - z[target]
    shape = logits.shape

    def bw(g):
        d = p.copy()
        d[target] -= 1.0
        return ((d * g[0]).reshape(shape),)

    return make("cross_entropy", np.array([loss]), (logits,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalisation with population variance, then affine."""
    _check_2d("layer_norm", x)
    d = x.shape[1]
    if d < 2:
        raise DimensionError("layer_norm needs at least 2 features")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: gamma/beta must be ({d},)")
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data

    def bw(g):
        gh = g * gd
        dx = inv * (gh - gh.mean(axis=1, keepdims=True) - xhat * (gh * xhat).mean(axis=1, keepdims=True))
        return (dx, (g * xhat).sum(axis=0), g.sum(axis=0))

    return make("layer_norm", xhat * gd + beta.data, (x, gamma, beta), bw)


# ---------------------------------------------------------------- attention


@dataclass
class AttentionParams:
    """Projection weights for :func:`multi_head_attention`.

    There is no key bias: it shifts every score of a query row by the same
    amount, which the softmax cancels exactly.
    """

    wq: Tensor
    bq: Tensor
    wk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    def tensors(self) -> tuple:
        return (self.wq, self.bq, self.wk, self.wv, self.bv, self.wo, self.bo)


def multi_head_attention(
    q_in: Tensor,
    k_in: Tensor,
    v_in: Tensor,
    params: AttentionParams,
    n_heads: int,
    mask=None,
) -> Tensor:
    """Scaled dot-product attention over ``n_heads`` heads, output-projected.

    ``mask`` is boolean, True = attend, shaped ``[n]`` (key mask) or ``[m x n]``.
    """
    _check_2d("multi_head_attention", q_in, k_in, v_in)
    m, d = q_in.shape
    n = k_in.shape[0]
    if v_in.shape[0] != n:
        raise DimensionError(f"attention: {n} keys but {v_in.shape[0]} values")
    if k_in.shape[1] != d or v_in.shape[1] != d:
        raise DimensionError("attention: query/key/value widths differ")
    if n_heads < 1 or d % n_heads:
        raise ConfigError(f"attention: width {d} not divisible by {n_heads} heads")
    p = params
    if p.wq.shape != (d, d):
        raise DimensionError(f"attention: projection shape {p.wq.shape} for width {d}")
    h, dh = n_heads, d // n_heads
    scale_ = 1.0 / math.sqrt(dh)
    mk = _as_mask(mask, (m, n))

    qd, kd, vd = q_in.data, k_in.data, v_in.data
    Q = qd @ p.wq.data + p.bq.data
    K = kd @ p.wk.data
    V = vd @ p.wv.data + p.bv.data
    Qh = Q.reshape(m, h, dh).transpose(1, 0, 2)
    Kh = K.reshape(n, h, dh).transpose(1, 0, 2)
    Vh = V.reshape(n, h, dh).transpose(1, 0, 2)
    S = (Qh @ Kh.transpose(0, 2, 1)) * scale_
    P = _masked_softmax(S, None if mk is None else mk[None, :, :])
    Oh = P @ Vh
    O = np.ascontiguousarray(Oh.transpose(1, 0, 2)).reshape(m, d)
    out = O @ p.wo.data + p.bo.data
    wq, wk, wv, wo = p.wq.data, p.wk.data, p.wv.data, p.wo.data

    def bw(g):
        dO = g @ wo.T
        dwo = O.T @ g
        dbo = g.sum(axis=0)
        dOh = dO.reshape(m, h, dh).transpose(1, 0, 2)
        dP = dOh @ Vh.transpose(0, 2, 1)
        dVh = P.transpose(0, 2, 1) @ dOh
        dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True)) * scale_
        dQh = dS @ Kh
        dKh = dS.transpose(0, 2, 1) @ Qh
        dQ = dQh.transpose(1, 0, 2).reshape(m, d)
        dK = dKh.transpose(1, 0, 2).reshape(n, d)
        dV = dVh.transpose(1, 0, 2).reshape(n, d)
        return (
            dQ @ wq.T,
            dK @ wk.T,
            dV @ wv.T,
            qd.T @ dQ,
            dQ.sum(axis=0),
            kd.T @ dK,
            vd.T @ dV,
            dV.sum(axis=0),
            dwo,
            dbo,
        )

    return make("mha", out, (q_in, k_in, v_in) + p.tensors(), bw)
