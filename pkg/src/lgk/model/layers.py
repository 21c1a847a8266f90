"""Transformer building blocks over the autodiff ops (post-norm residual)."""

from __future__ import annotations

from dataclasses import dataclass

from lgk.autodiff import (
    AttentionParams,
    ParamStore,
    Tensor,
    layer_norm,
    linear,
    multi_head_attention,
    relu,
)
from lgk.autodiff.ops import add


def attention_params(store: ParamStore, prefix: str, d: int) -> AttentionParams:
    return AttentionParams(
        store.add(f"{prefix}.wq", (d, d)),
        store.add(f"{prefix}.bq", (d,), "zeros"),
        store.add(f"{prefix}.wk", (d, d)),
        store.add(f"{prefix}.wv", (d, d)),
        store.add(f"{prefix}.bv", (d,), "zeros"),
        store.add(f"{prefix}.wo", (d, d)),
        store.add(f"{prefix}.bo", (d,), "zeros"),
    )


@dataclass
class Norm:
    gamma: Tensor
    beta: Tensor

    @classmethod
    def build(cls, store: ParamStore, prefix: str, d: int) -> "Norm":
        return cls(store.add(f"{prefix}.gamma", (d,), "ones"), store.add(f"{prefix}.beta", (d,), "zeros"))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


@dataclass
class FFN:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor | None

    @classmethod
    def build(cls, store: ParamStore, prefix: str, d_in: int, hidden: int, d_out: int, out_bias: bool = True) -> "FFN":
        return cls(
            store.add(f"{prefix}.w1", (d_in, hidden)),
            store.add(f"{prefix}.b1", (hidden,), "zeros"),
            store.add(f"{prefix}.w2", (hidden, d_out)),
            store.add(f"{prefix}.b2", (d_out,), "zeros") if out_bias else None,
        )

    def __call__(self, x: Tensor) -> Tensor:
        return linear(relu(linear(x, self.w1, self.b1)), self.w2, self.b2)


@dataclass
class AttnSublayer:
    attn: AttentionParams
    norm: Norm
    n_heads: int

    @classmethod
    def build(cls, store: ParamStore, prefix: str, d: int, n_heads: int) -> "AttnSublayer":
        return cls(attention_params(store, f"{prefix}.attn", d), Norm.build(store, f"{prefix}.ln", d), n_heads)

    def attend(self, x: Tensor, ctx: Tensor, mask=None) -> Tensor:
        return multi_head_attention(x, ctx, ctx, self.attn, self.n_heads, mask)

    def __call__(self, x: Tensor, ctx: Tensor, mask=None) -> Tensor:
        return self.norm(add(x, self.attend(x, ctx, mask)))


@dataclass
class FFNSublayer:
    ffn: FFN
    norm: Norm

    @classmethod
    def build(cls, store: ParamStore, prefix: str, d: int, hidden: int) -> "FFNSublayer":
        return cls(FFN.build(store, f"{prefix}.ffn", d, hidden, d), Norm.build(store, f"{prefix}.ln", d))

    def __call__(self, x: Tensor) -> Tensor:
        return self.norm(add(x, self.ffn(x)))


@dataclass
class EncoderLayer:
    """Self-attention then FFN."""

    self_attn: AttnSublayer
    ffn: FFNSublayer

    @classmethod
    def build(cls, store, prefix, d, n_heads, hidden) -> "EncoderLayer":
        return cls(
            AttnSublayer.build(store, f"{prefix}.self", d, n_heads),
            FFNSublayer.build(store, f"{prefix}.ff", d, hidden),
        )

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        return self.ffn(self.self_attn(x, x, mask))


@dataclass
class CrossLayer:
    """Cross-attention to a context stream, then self-attention, then FFN."""

    cross: AttnSublayer
    self_attn: AttnSublayer
    ffn: FFNSublayer

    @classmethod
    def build(cls, store, prefix, d, n_heads, hidden) -> "CrossLayer":
        return cls(
            AttnSublayer.build(store, f"{prefix}.cross", d, n_heads),
            AttnSublayer.build(store, f"{prefix}.self", d, n_heads),
            FFNSublayer.build(store, f"{prefix}.ff", d, hidden),
        )

    def __call__(self, x: Tensor, ctx: Tensor, ctx_mask=None) -> Tensor:
        x = self.cross(x, ctx, ctx_mask)
        return self.ffn(self.self_attn(x, x))


@dataclass
class CoLayer:
    """Two streams cross-attend to each other, then each self-attends."""

    a: CrossLayer
    b: CrossLayer

    @classmethod
    def build(cls, store, prefix, d, n_heads, hidden) -> "CoLayer":
        return cls(
            CrossLayer.build(store, f"{prefix}.a", d, n_heads, hidden),
            CrossLayer.build(store, f"{prefix}.b", d, n_heads, hidden),
        )

    def __call__(self, a: Tensor, b: Tensor) -> tuple:
        # both cross steps read the previous layer's streams
        a_x = self.a.cross(a, b)
        b_x = self.b.cross(b, a)
        a_out = self.a.ffn(self.a.self_attn(a_x, a_x))
        b_out = self.b.ffn(self.b.self_attn(b_x, b_x))
        return a_out, b_out
