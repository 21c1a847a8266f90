"""Time the compiled scan kernels against their numpy forms.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel and size. Compilation happens in a warm-up call
that is not timed. Without numba installed the two columns coincide.
"""

import argparse
import timeit

import numpy as np

from lgk import kernels
from lgk._accel import NUMBA_AVAILABLE


def random_graph(rng, n, degree=3.0):
    pos = rng.uniform(0, 20, size=(n, 3))
    w = np.full((n, n), np.inf)
    for a in range(n):
        for b in rng.choice(n, size=int(degree), replace=False):
            if a != b:
                d = float(np.linalg.norm(pos[a] - pos[b]))
                w[a, b] = w[b, a] = d
    return w


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_topk(rng, repeat):
    for n in (1_000, 10_000, 100_000):
        m = rng.standard_normal((n, 32))
        m /= np.linalg.norm(m, axis=1, keepdims=True)
        mask = rng.random(n) > 0.1
        ids = np.arange(n, dtype=np.int64)
        q = m[0].copy()
        kernels.topk_scan_jit(m, mask, ids, q, 5)
        a = best_of(lambda: kernels.topk_scan_jit(m, mask, ids, q, 5), repeat)
        b = best_of(lambda: kernels.topk_scan_numpy(m, mask, ids, q, 5), repeat)
        yield "topk_scan", n, a, b


def bench_all_pairs(rng, repeat):
    for n in (10, 50, 200):
        w = random_graph(rng, n)
        kernels.all_pairs_jit(w)
        a = best_of(lambda: kernels.all_pairs_jit(w), repeat)
        b = best_of(lambda: kernels.all_pairs_numpy(w), repeat)
        yield "all_pairs", n, a, b


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba available: {NUMBA_AVAILABLE}")
    print(f"{'kernel':<10} {'n':>8} {'jit ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for gen in (bench_topk, bench_all_pairs):
        for name, n, jit_s, np_s in gen(rng, args.repeat):
            print(f"{name:<10} {n:>8} {jit_s * 1e3:>10.3f} {np_s * 1e3:>10.3f} {np_s / jit_s:>8.2f}")


if __name__ == "__main__":
    main()
