"""Dense float64 tensors recorded on an append-only reverse-mode tape."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from lgk.errors import ContractError, DimensionError, NumericalError

_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class Tensor:
    """Rank 1-3 array of finite float64 values.

    ``requires_grad`` marks leaves whose gradients :func:`backward` reports.
    Results of ops recorded on a tape also carry ``requires_grad=True``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, order="C")
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > 3:
            raise DimensionError(f"tensor rank must be 1-3, got {arr.ndim}")
        if arr.size == 0 or 0 in arr.shape:
            raise DimensionError(f"tensor extents must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericalError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None
        self._tape: Tape | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # fast path for op outputs: dtype/contiguity already guaranteed
        if not np.isfinite(arr).all():
            raise NumericalError("operation produced NaN or Inf")
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._node = None
        t._tape = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from lgk.autodiff import ops

        if isinstance(other, Tensor):
            return ops.add(self, other)
        return ops.add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        from lgk.autodiff import ops

        if isinstance(other, Tensor):
            return ops.sub(self, other)
        return ops.add_scalar(self, -float(other))

    def __rsub__(self, other):
        from lgk.autodiff import ops

        return ops.rsub_scalar(float(other), self)

    def __mul__(self, other):
        from lgk.autodiff import ops

        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        from lgk.autodiff import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from lgk.autodiff import ops

        return ops.matmul(self, other)


@dataclass
class _Node:
    index: int
    kind: str
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; ops executed inside the ``with`` block are
    recorded when at least one input requires a gradient.
    """

    nodes: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise ContractError("tape exit out of order")
        stack.pop()
        return False

    def reset(self) -> None:
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)

    def record(self, kind: str, out: Tensor, inputs: tuple, backward_fn) -> None:
        node = _Node(len(self.nodes), kind, inputs, backward_fn)
        self.nodes.append(node)
        out._node = node
        out._tape = self
        out.requires_grad = True


def make(kind: str, out_data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    """Wrap an op result and record it on the active tape if needed."""
    out = Tensor._wrap(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(kind, out, inputs, backward_fn)
    return out


def backward(loss: Tensor, tape: Tape | None = None) -> dict:
    """Reverse-mode sweep from a scalar ``loss``.

    Returns ``{leaf: grad}`` for every requires-grad leaf that feeds the
    recorded graph, and stores each gradient on ``leaf.grad``. Leaves with
    no path to the loss get zeros. The tape itself is not modified.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape if tape is not None else loss._tape
    node = loss._node
    if tape is None or node is None or loss._tape is not tape:
        raise ContractError("loss was not recorded on this tape")

    inner: dict[int, np.ndarray] = {node.index: np.ones_like(loss.data)}
    leaf_grads: dict[int, np.ndarray] = {}
    leaves: dict[int, Tensor] = {}

    for nd in reversed(tape.nodes[: node.index + 1]):
        g = inner.pop(nd.index, None)
        if g is None:
            for inp in nd.inputs:
                if inp.requires_grad and inp._node is None:
                    leaves.setdefault(id(inp), inp)
            continue
        in_grads = nd.backward(g)
        for inp, gi in zip(nd.inputs, in_grads):
            if not inp.requires_grad:
                continue
            if inp._node is None or inp._tape is not tape:
                key = id(inp)
                leaves.setdefault(key, inp)
                if gi is None:
                    continue
                if key in leaf_grads:
                    leaf_grads[key] = leaf_grads[key] + gi
                else:
                    leaf_grads[key] = np.array(gi, dtype=np.float64)
            else:
                if gi is None:
                    continue
                k = inp._node.index
                if k in inner:
                    inner[k] = inner[k] + gi
                else:
                    inner[k] = np.array(gi, dtype=np.float64)

    out = {}
    for key, leaf in leaves.items():
        g = leaf_grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        g = g.reshape(leaf.data.shape)
        leaf.grad = g
        out[leaf] = g
    return out
