"""Knowledge matching: per-sub-region top-k retrieval over KB2 noun embeddings.

Each panorama view is split into five sub-regions. A sub-region embedding
is the query, the stored KB2 noun embeddings are the keys, and every hit
carries the KB1 description at the same position.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from lgk import kernels
from lgk.errors import (
    ConfigError,
    DegenerateEmbeddingError,
    DimensionError,
    NoCandidatesError,
    ParseError,
    UnknownViewError,
    ValidationError,
)

QUADRANTS = ("NW", "NE", "SW", "SE", "CENTER")
NORM_EPS = 1e-12


class EmbeddingProvider(Protocol):
    dim: int

    def text_embed(self, text: str) -> np.ndarray: ...

    def image_embed(self, key: str) -> np.ndarray: ...


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if not np.isfinite(n) or n <= NORM_EPS:
        raise DegenerateEmbeddingError(f"cannot normalise vector with norm {n:.3g}")
    return v / n


# ---------------------------------------------------------------- providers


class HashProvider:
    """Deterministic pseudo-random unit vectors, one per (namespace, string)."""

    def __init__(self, dim: int = 32, seed: int = 0):
        if dim < 1:
            raise ConfigError("embedding dim must be positive")
        self.dim = dim
        self.seed = seed
        self._cache: dict = {}

    def _vec(self, namespace: str, key: str) -> np.ndarray:
        ck = (namespace, key)
        v = self._cache.get(ck)
        if v is None:
            digest = hashlib.sha256(f"{self.seed}\x1f{namespace}\x1f{key}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            v = rng.standard_normal(self.dim)
            v /= np.linalg.norm(v)
            v.setflags(write=False)
            self._cache[ck] = v
        return v

    def text_embed(self, text: str) -> np.ndarray:
        return self._vec("text", text)

    def image_embed(self, key: str) -> np.ndarray:
        return self._vec("image", key)


class FixtureProvider:
    """Vectors read from JSONL ``{"key": ..., "vec": [...]}``.

    Text and image lookups share one key space. Keys missing from the file
    go to ``fallback`` when one is given and raise otherwise.
    """

    def __init__(self, table: dict, fallback: EmbeddingProvider | None = None):
        if not table and fallback is None:
            raise ValidationError("embedding fixture is empty")
        dims = {len(v) for v in table.values()}
        if fallback is not None:
            dims.add(fallback.dim)
        if len(dims) > 1:
            raise ValidationError(f"embedding fixture mixes dimensions {sorted(dims)}")
        self.dim = dims.pop()
        self._table = {}
        for k, v in table.items():
            arr = np.asarray(v, dtype=np.float64)
            if not np.isfinite(arr).all():
                raise ValidationError(f"embedding for {k!r} is not finite")
            arr.setflags(write=False)
            self._table[k] = arr
        self.fallback = fallback

    @classmethod
    def from_file(cls, path, fallback=None) -> "FixtureProvider":
        table = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    doc = json.loads(line)
                    key, vec = doc["key"], doc["vec"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ParseError(f"bad embedding record ({exc})", lineno) from None
                if key in table:
                    raise ParseError(f"duplicate key {key!r}", lineno)
                table[key] = vec
        return cls(table, fallback)

    def __contains__(self, key):
        return key in self._table

    def keys(self):
        return self._table.keys()

    def _get(self, key: str, kind: str) -> np.ndarray:
        v = self._table.get(key)
        if v is not None:
            return v
        if self.fallback is not None:
            return getattr(self.fallback, kind)(key)
        raise ValidationError(f"no embedding for key {key!r}")

    def text_embed(self, text: str) -> np.ndarray:
        return self._get(text, "text_embed")

    def image_embed(self, key: str) -> np.ndarray:
        return self._get(key, "image_embed")


def save_fixture(table: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, vec in table.items():
            fh.write(json.dumps({"key": key, "vec": [float(x) for x in vec]}) + "\n")


# ---------------------------------------------------------------- store


@dataclass(frozen=True)
class EmbeddingStore:
    matrix: np.ndarray
    row_to_kb: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        for arr in (self.matrix, self.row_to_kb, self.mask):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return self.matrix.shape[0]


def embed_kb(kb, provider: EmbeddingProvider) -> EmbeddingStore:
    """One unit row per KB entry; multi-noun entries embed the joined nouns.

    Non-retrievable rows hold a fixed placeholder and are masked out.
    """
    n, d = len(kb), provider.dim
    matrix = np.zeros((max(n, 0), d))
    mask = np.zeros(n, dtype=bool)
    for i, entry in enumerate(kb):
        if entry.retrievable:
            vec = np.asarray(provider.text_embed(" ".join(entry.kb2_nouns)), dtype=np.float64)
            try:
                matrix[i] = normalize(vec)
            except DegenerateEmbeddingError:
                raise DegenerateEmbeddingError(f"degenerate embedding for kb entry {entry.id}") from None
            mask[i] = True
        else:
            matrix[i, 0] = 1.0
    ids = np.array([e.id for e in kb], dtype=np.int64)
    return EmbeddingStore(np.ascontiguousarray(matrix), ids, mask)


def cosine_topk(query, store: EmbeddingStore, k: int = 5) -> list:
    """Top-``k`` retrievable rows by cosine score as ``[(kb_id, score)]``.

    Ordered by score descending, ties by ascending kb id.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (store.dim,):
        raise DimensionError(f"query shape {query.shape} vs store dim {store.dim}")
    if not store.mask.any():
        raise NoCandidatesError("no retrievable entries in store")
    q = normalize(query)
    rows, scores = kernels.topk_scan(store.matrix, store.mask, store.row_to_kb, q, k)
    ids = store.row_to_kb[rows]
    return [(int(i), float(min(1.0, max(-1.0, s)))) for i, s in zip(ids, scores)]


# ---------------------------------------------------------------- sub-regions


def view_key(scene_id: str, node: int, view: int) -> str:
    return f"{scene_id}/{node}/{view}"


def parse_view_id(view_id) -> tuple:
    if isinstance(view_id, tuple):
        scene_id, node, view = view_id
        return str(scene_id), int(node), int(view)
    try:
        scene_id, node, view = str(view_id).rsplit("/", 2)
        return scene_id, int(node), int(view)
    except ValueError:
        raise UnknownViewError(f"malformed view id {view_id!r}") from None


def split_subregions(view_id, scene=None) -> list:
    """The five sub-region ids ``<scene>/<node>/<view>/<quadrant>`` of a view."""
    scene_id, node, view = parse_view_id(view_id)
    if scene is not None:
        if scene_id != scene.scene_id or node not in scene.panoramas:
            raise UnknownViewError(f"unknown view {view_key(scene_id, node, view)}")
        if not 0 <= view < len(scene.panoramas[node]):
            raise UnknownViewError(f"unknown view {view_key(scene_id, node, view)}")
    base = view_key(scene_id, node, view)
    return [f"{base}/{q}" for q in QUADRANTS]


def parse_subregion_id(sub_id: str) -> tuple:
    scene_id, node, view, quad = sub_id.rsplit("/", 3)
    if quad not in QUADRANTS:
        raise UnknownViewError(f"bad sub-region id {sub_id!r}")
    return scene_id, int(node), int(view), quad


# ---------------------------------------------------------------- matching


@dataclass(frozen=True)
class MatchResult:
    subregion_id: str
    hits: tuple
    kb1_texts: tuple

    def to_dict(self) -> dict:
        return {
            "subregion_id": self.subregion_id,
            "hits": [{"kb_id": i, "score": s, "kb1_text": t} for (i, s), t in zip(self.hits, self.kb1_texts)],
        }


def match_view(view_id, kb, provider: EmbeddingProvider, k: int = 5, store: EmbeddingStore | None = None, scene=None) -> list:
    store = embed_kb(kb, provider) if store is None else store
    results = []
    for sub in split_subregions(view_id, scene):
        hits = tuple(cosine_topk(provider.image_embed(sub), store, k))
        results.append(MatchResult(sub, hits, tuple(kb[i].kb1_text for i, _ in hits)))
    return results


def knowledge_set(results: Sequence[MatchResult], cap: int | None = None) -> list:
    """Order-preserving, de-duplicated kb ids over a flattened result list."""
    seen, out = set(), []
    if cap == 0:
        return out
    for r in results:
        for kb_id, _ in r.hits:
            if kb_id not in seen:
                seen.add(kb_id)
                out.append(kb_id)
                if cap is not None and len(out) >= cap:
                    return out
    return out


class KnowledgeMatcher:
    """Matches a node's candidate views and caches the step knowledge."""

    def __init__(self, kb, provider: EmbeddingProvider, k: int = 5, q_cap: int = 25):
        if k < 1 or q_cap < 0:
            raise ConfigError("k must be >= 1 and q_cap >= 0")
        self.kb = kb
        self.provider = provider
        self.k = k
        self.q_cap = q_cap
        self.store = embed_kb(kb, provider)
        self._cache: dict = {}

    def match_node(self, scene, node: int) -> list:
        """``[(view_index, [MatchResult x5])]`` over the node's candidate views."""
        out = []
        for view in scene.candidate_views(node):
            vid = (scene.scene_id, node, view)
            out.append((view, match_view(vid, self.kb, self.provider, self.k, self.store, scene)))
        return out

    def step_knowledge(self, scene, node: int) -> list:
        key = (scene.scene_id, node)
        ids = self._cache.get(key)
        if ids is None:
            flat = [r for _, rs in self.match_node(scene, node) for r in rs]
            ids = knowledge_set(flat, self.q_cap)
            self._cache[key] = ids
        return list(ids)

    def texts(self, ids) -> list:
        return [self.kb[i].kb1_text for i in ids]


def match_dump(scene, node: int, matcher: KnowledgeMatcher, views=None) -> dict:
    if views is None:
        per_view = matcher.match_node(scene, node)
    else:
        per_view = [
            (v, match_view((scene.scene_id, node, v), matcher.kb, matcher.provider, matcher.k, matcher.store, scene))
            for v in views
        ]
    flat = [r for _, rs in per_view for r in rs]
    return {
        "scene_id": scene.scene_id,
        "node": node,
        "k": matcher.k,
        "views": [{"view": v, "subregions": [r.to_dict() for r in rs]} for v, rs in per_view],
        "knowledge": knowledge_set(flat, matcher.q_cap),
    }


def load_provider(embeddings: str | Path | None = None, hash_seed: int | None = None, dim: int = 32):
    fallback = HashProvider(dim, hash_seed) if hash_seed is not None else None
    if embeddings:
        return FixtureProvider.from_file(embeddings, fallback)
    return fallback if fallback is not None else HashProvider(dim, 0)
