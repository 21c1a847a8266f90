"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from lgk.autodiff.tensor import Tape, Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str | None
    worst_index: int | None
    checked: int
    per_param: dict = field(default_factory=dict)

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1e-8, abs(a), abs(b))


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    h: float = 1e-6,
    tol: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of ``f()`` with central differences.

    The step for entry ``theta`` is ``h * (1 + |theta|)``. ``max_entries``
    caps how many entries of each parameter are probed (sampled with a
    seeded generator); ``None`` checks every entry. ``tol`` is only used to
    annotate the report.
    """
    if not isinstance(params, Mapping):
        params = {f"p{i}": t for i, t in enumerate(params)}
    with Tape() as tape:
        loss = f()
    grads = backward(loss, tape)
    rng = np.random.default_rng(seed)

    worst, worst_name, worst_idx, checked = 0.0, None, None, 0
    per_param = {}
    for name, t in params.items():
        g = grads.get(t)
        g = np.zeros_like(t.data) if g is None else g
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        p_worst = 0.0
        for i in idx:
            orig = flat[i]
            step = h * (1.0 + abs(orig))
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            err = rel_err(float(gflat[i]), num)
            checked += 1
            if err > p_worst:
                p_worst = err
            if err > worst:
                worst, worst_name, worst_idx = err, name, int(i)
        per_param[name] = p_worst
    return GradCheckReport(worst, worst_name, worst_idx, checked, per_param)
