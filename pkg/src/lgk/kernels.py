"""Hot scan kernels: exhaustive top-k dot-product search and dense Dijkstra.

Each kernel has a loop form (compiled with numba when enabled) and a
vectorised numpy form. Both produce identical orderings; the module-level
``topk_scan`` / ``dijkstra`` / ``all_pairs_shortest`` pick one according to
:data:`lgk._accel.USE_NUMBA`.
"""

from __future__ import annotations

import numpy as np

from lgk._accel import USE_NUMBA, njit


def _topk_loop(matrix, mask, ids, query, k):
    n, d = matrix.shape
    best_s = np.empty(k, dtype=np.float64)
    best_r = np.empty(k, dtype=np.int64)
    count = 0
    for r in range(n):
        if not mask[r]:
            continue
        s = 0.0
        for j in range(d):
            s += matrix[r, j] * query[j]
        if count < k:
            pos = count
            count += 1
        else:
            ws = best_s[k - 1]
            if s < ws or (s == ws and ids[r] > ids[best_r[k - 1]]):
                continue
            pos = k - 1
        while pos > 0:
            ps = best_s[pos - 1]
            if s > ps or (s == ps and ids[r] < ids[best_r[pos - 1]]):
                best_s[pos] = ps
                best_r[pos] = best_r[pos - 1]
                pos -= 1
            else:
                break
        best_s[pos] = s
        best_r[pos] = r
    return best_r[:count].copy(), best_s[:count].copy()


def topk_scan_numpy(matrix, mask, ids, query, k):
    """Rows with the ``k`` largest ``matrix @ query`` among ``mask``.

    Ordered by score descending, then ``ids`` ascending.
    """
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        return rows.astype(np.int64), np.empty(0)
    # sequential left-to-right sum, so scores match the loop kernel bit for bit
    scores = np.cumsum(matrix[rows] * query, axis=1)[:, -1]
    order = np.lexsort((ids[rows], -scores))[:k]
    return rows[order].astype(np.int64), scores[order]


def _dijkstra_loop(weights, src):
    n = weights.shape[0]
    dist = np.full(n, np.inf)
    done = np.zeros(n, dtype=np.bool_)
    dist[src] = 0.0
    for _ in range(n):
        u = -1
        best = np.inf
        for i in range(n):
            if not done[i] and dist[i] < best:
                best = dist[i]
                u = i
        if u < 0:
            break
        done[u] = True
        du = dist[u]
        for v in range(n):
            w = weights[u, v]
            if w < np.inf and du + w < dist[v]:
                dist[v] = du + w
    return dist


def dijkstra_numpy(weights, src):
    """Single-source distances over a dense weight matrix (``inf`` = no edge)."""
    n = weights.shape[0]
    dist = np.full(n, np.inf)
    done = np.zeros(n, dtype=bool)
    dist[src] = 0.0
    for _ in range(n):
        open_d = np.where(done, np.inf, dist)
        u = int(np.argmin(open_d))
        if not np.isfinite(open_d[u]):
            break
        done[u] = True
        cand = dist[u] + weights[u]
        better = cand < dist
        dist[better] = cand[better]
    return dist


def _all_pairs_loop(weights):
    n = weights.shape[0]
    out = np.empty((n, n))
    for s in range(n):
        out[s] = dijkstra_jit(weights, s)
    return out


def all_pairs_numpy(weights):
    return np.stack([dijkstra_numpy(weights, s) for s in range(weights.shape[0])])


topk_scan_jit = njit(_topk_loop, cache=True)
dijkstra_jit = njit(_dijkstra_loop, cache=True)
# resolved as a global at compile time, so the compiled loop calls the compiled Dijkstra
all_pairs_jit = njit(_all_pairs_loop, cache=True)

if USE_NUMBA:
    topk_scan = topk_scan_jit
    dijkstra = dijkstra_jit
    all_pairs_shortest = all_pairs_jit
else:
    topk_scan = topk_scan_numpy
    dijkstra = dijkstra_numpy
    all_pairs_shortest = all_pairs_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
