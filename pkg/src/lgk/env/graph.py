"""Shortest paths on scene graphs."""

from __future__ import annotations

import math

import numpy as np

from lgk.errors import UnreachableError, ValidationError

PATH_TOL = 1e-9


def path_length(scene, path) -> float:
    """Exact (``math.fsum``) length of a walk; raises on a non-edge step."""
    total = []
    for a, b in zip(path, path[1:]):
        w = scene.weights.get((a, b))
        if w is None:
            raise ValidationError(f"({a},{b}) is not an edge")
        total.append(w)
    return math.fsum(total)


def geodesic(scene, a: int, b: int) -> float:
    d = scene.distances()[scene.index(a), scene.index(b)]
    if not np.isfinite(d):
        raise UnreachableError(f"node {b} unreachable from {a}")
    return float(d)


def shortest_path(scene, a: int, b: int, allowed=None) -> tuple:
    """Minimal-weight path ``a -> b`` and its length in metres.

    Among equal-length paths the lexicographically smallest node sequence
    wins. ``allowed`` restricts intermediate nodes to a subset.
    """
    for n in (a, b):
        if n not in scene.adjacency:
            raise ValidationError(f"unknown node {n}")
    if a == b:
        return [a], 0.0
    if allowed is None:
        dist_to_b = scene.distances()[:, scene.index(b)]
        index = scene.index
    else:
        nodes = sorted(set(allowed) | {a, b})
        sub = {n: i for i, n in enumerate(nodes)}
        W = np.full((len(nodes), len(nodes)), np.inf)
        for u in nodes:
            for v in scene.adjacency[u]:
                if v in sub:
                    W[sub[u], sub[v]] = scene.weights[(u, v)]
        from lgk.kernels import dijkstra

        dist_to_b = np.asarray(dijkstra(W, sub[b]))
        index = sub.__getitem__
    if not np.isfinite(dist_to_b[index(a)]):
        raise UnreachableError(f"node {b} unreachable from {a}")

    path, u = [a], a
    while u != b:
        du = dist_to_b[index(u)]
        tol = PATH_TOL * max(1.0, du)
        nxt = None
        for v in scene.adjacency[u]:
            if allowed is not None and v not in sub:
                continue
            dv = dist_to_b[index(v)]
            if abs(scene.weights[(u, v)] + dv - du) <= tol and dv < du:
                nxt = v
                break
        if nxt is None:  # pragma: no cover - guards against float pathologies
            raise UnreachableError(f"path reconstruction stalled at {u}")
        path.append(nxt)
        u = nxt
    return path, path_length(scene, path)
