"""Scenes: undirected viewpoint graphs with panoramas, objects and episodes."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lgk.errors import ConfigError, ValidationError

log = logging.getLogger(__name__)

N_VIEWS = 36
VIEWS_PER_ROW = 12
WEIGHT_TOL = 1e-6
CLS_TOKEN = "[CLS]"
DEFAULT_MAX_STEPS = 15
BOX = (20.0, 20.0, 3.0)


def view_angles(view: int) -> tuple:
    """Azimuth and elevation (radians) of view ``view`` in a 12 x 3 grid."""
    az = (view % VIEWS_PER_ROW) * (2 * math.pi / VIEWS_PER_ROW)
    el = (view // VIEWS_PER_ROW - 1) * (math.pi / 6)
    return az, el


@dataclass(frozen=True)
class View:
    view: int
    az: float
    el: float
    feat_key: str
    link: int | None = None

    def to_dict(self) -> dict:
        d = {"view": self.view, "az": self.az, "el": self.el}
        if self.link is not None:
            d["link"] = self.link
        d["feat_key"] = self.feat_key
        return d


@dataclass(frozen=True)
class SceneObject:
    obj_id: str
    feat_key: str


@dataclass(frozen=True)
class EpisodeSpec:
    episode_id: str
    start: int
    goal: int
    tokens: tuple
    landmarks: tuple = ()
    target_object: str | None = None
    max_steps: int = DEFAULT_MAX_STEPS

    @property
    def trivial(self) -> bool:
        return self.start == self.goal

    def to_dict(self) -> dict:
        return {
            "id": self.episode_id,
            "start": self.start,
            "goal": self.goal,
            "instruction": {"tokens": list(self.tokens), "landmarks": [list(s) for s in self.landmarks]},
            "target_object": self.target_object,
            "max_steps": self.max_steps,
        }

    @classmethod
    def from_dict(cls, d: dict, index: int = 0) -> "EpisodeSpec":
        instr = d.get("instruction", {})
        return cls(
            episode_id=str(d.get("id", f"ep{index}")),
            start=int(d["start"]),
            goal=int(d["goal"]),
            tokens=tuple(instr.get("tokens", ())),
            landmarks=tuple(tuple(int(x) for x in s) for s in instr.get("landmarks", ())),
            target_object=d.get("target_object"),
            max_steps=int(d.get("max_steps", DEFAULT_MAX_STEPS)),
        )


@dataclass
class Scene:
    scene_id: str
    positions: dict
    edges: list
    panoramas: dict
    objects: dict
    episodes: list = field(default_factory=list)
    declared_weights: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = sorted(self.positions)
        self._index = {n: i for i, n in enumerate(self.nodes)}
        self.adjacency = {n: [] for n in self.nodes}
        self.weights = {}
        for a, b in self.edges:
            if a in self.adjacency and b in self.adjacency and a != b:
                w = math.dist(self.positions[a], self.positions[b])
                self.weights[(a, b)] = self.weights[(b, a)] = w
                self.adjacency[a].append(b)
                self.adjacency[b].append(a)
        for n in self.adjacency:
            self.adjacency[n] = sorted(set(self.adjacency[n]))
        self._dist = None

    # ------------------------------------------------------------ queries

    def neighbors(self, node: int) -> list:
        return self.adjacency[node]

    def weight(self, a: int, b: int) -> float:
        return self.weights[(a, b)]

    def index(self, node: int) -> int:
        return self._index[node]

    def candidate_views(self, node: int) -> list:
        return [v.view for v in self.panoramas[node] if v.link is not None]

    def candidate_map(self, node: int) -> dict:
        return {v.view: v.link for v in self.panoramas[node] if v.link is not None}

    def object_ids(self) -> set:
        return {o.obj_id for objs in self.objects.values() for o in objs}

    def weight_matrix(self) -> np.ndarray:
        n = len(self.nodes)
        W = np.full((n, n), np.inf)
        for (a, b), w in self.weights.items():
            W[self._index[a], self._index[b]] = w
        return W

    def distances(self) -> np.ndarray:
        """All-pairs geodesic distances, indexed by :meth:`index`."""
        if self._dist is None:
            from lgk.kernels import all_pairs_shortest

            d = np.asarray(all_pairs_shortest(self.weight_matrix()))
            d.setflags(write=False)
            self._dist = d
        return self._dist

    # ------------------------------------------------------------ serialisation

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "nodes": [{"id": n, "pos": [float(x) for x in self.positions[n]]} for n in self.nodes],
            "edges": [[a, b] for a, b in self.edges],
            "panoramas": {str(n): [v.to_dict() for v in self.panoramas[n]] for n in self.nodes},
            "objects": {
                str(n): [{"obj_id": o.obj_id, "feat_key": o.feat_key} for o in self.objects.get(n, [])]
                for n in self.nodes
                if self.objects.get(n)
            },
            "episodes": [e.to_dict() for e in self.episodes],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scene":
        try:
            positions = {int(n["id"]): tuple(float(x) for x in n["pos"]) for n in doc["nodes"]}
            edges, declared = [], {}
            for e in doc["edges"]:
                a, b = int(e[0]), int(e[1])
                edges.append((a, b))
                if len(e) > 2:
                    declared[(a, b)] = float(e[2])
            panoramas = {}
            for key, views in doc.get("panoramas", {}).items():
                panoramas[int(key)] = [
                    View(
                        int(v["view"]),
                        float(v["az"]),
                        float(v["el"]),
                        str(v["feat_key"]),
                        None if v.get("link") is None else int(v["link"]),
                    )
                    for v in views
                ]
            objects = {
                int(key): [SceneObject(str(o["obj_id"]), str(o["feat_key"])) for o in objs]
                for key, objs in doc.get("objects", {}).items()
            }
            episodes = [EpisodeSpec.from_dict(e, i) for i, e in enumerate(doc.get("episodes", []))]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed scene document: {exc!r}") from None
        return cls(str(doc.get("scene_id", "scene")), positions, edges, panoramas, objects, episodes, declared)


def validate_scene(scene: Scene) -> None:
    """Raise :class:`ValidationError` listing every violated invariant."""
    problems = []
    for n, p in scene.positions.items():
        if len(p) != 3 or not all(math.isfinite(x) for x in p):
            problems.append(f"node {n}: position must be 3 finite coordinates")
    seen = set()
    for a, b in scene.edges:
        if a not in scene.positions or b not in scene.positions:
            problems.append(f"edge ({a},{b}): unknown endpoint")
            continue
        if a == b:
            problems.append(f"edge ({a},{b}): self-loop")
            continue
        key = (min(a, b), max(a, b))
        if key in seen:
            problems.append(f"edge ({a},{b}): duplicate")
        seen.add(key)
    for (a, b), w in scene.declared_weights.items():
        if a in scene.positions and b in scene.positions:
            true_w = math.dist(scene.positions[a], scene.positions[b])
            if abs(true_w - w) > WEIGHT_TOL:
                problems.append(f"edge ({a},{b}): weight {w} differs from Euclidean distance {true_w:.6f}")

    comps = connected_components(scene)
    if len(comps) > 1:
        problems.append("graph is disconnected; components: " + "; ".join(str(sorted(c)) for c in comps))

    for n in scene.nodes:
        views = scene.panoramas.get(n)
        if views is None:
            problems.append(f"node {n}: missing panorama")
            continue
        if len(views) != N_VIEWS:
            problems.append(f"node {n}: {len(views)} views, expected {N_VIEWS}")
        if [v.view for v in views] != list(range(len(views))):
            problems.append(f"node {n}: view indices must be 0..{len(views) - 1} in order")
        links = [v.link for v in views if v.link is not None]
        if len(links) != len(set(links)):
            problems.append(f"node {n}: two views link the same neighbour")
        if set(links) != set(scene.adjacency.get(n, [])):
            problems.append(
                f"node {n}: panorama links {sorted(set(links))} do not match graph neighbours {scene.adjacency.get(n, [])}"
            )
    for n in scene.panoramas:
        if n not in scene.positions:
            problems.append(f"panorama for unknown node {n}")

    obj_ids = []
    for n, objs in scene.objects.items():
        if n not in scene.positions:
            problems.append(f"objects for unknown node {n}")
        obj_ids.extend(o.obj_id for o in objs)
    if len(obj_ids) != len(set(obj_ids)):
        problems.append("duplicate object ids")

    for ep in scene.episodes:
        problems.extend(_episode_problems(scene, ep))
    if problems:
        raise ValidationError(f"scene {scene.scene_id}: " + " | ".join(problems))
    for ep in scene.episodes:
        if ep.trivial:
            log.warning("scene %s episode %s starts at its goal", scene.scene_id, ep.episode_id)


def _episode_problems(scene: Scene, ep: EpisodeSpec) -> list:
    out = []
    tag = f"episode {ep.episode_id}"
    for name, node in (("start", ep.start), ("goal", ep.goal)):
        if node not in scene.positions:
            out.append(f"{tag}: unknown {name} node {node}")
    if ep.max_steps < 1:
        out.append(f"{tag}: max_steps must be >= 1")
    if not ep.tokens or ep.tokens[0] != CLS_TOKEN:
        out.append(f"{tag}: instruction must start with {CLS_TOKEN}")
    prev_end = 1
    for span in ep.landmarks:
        if len(span) != 2:
            out.append(f"{tag}: landmark span {span} must be [start, end)")
            continue
        s, e = span
        if not (1 <= s < e <= len(ep.tokens)) or s < prev_end:
            out.append(f"{tag}: landmark span {list(span)} out of range, overlapping or unordered")
        prev_end = max(prev_end, e)
    if ep.target_object is not None and ep.target_object not in scene.object_ids():
        out.append(f"{tag}: unknown target object {ep.target_object}")
    return out


def connected_components(scene: Scene) -> list:
    left, comps = set(scene.nodes), []
    while left:
        root = min(left)
        comp, stack = {root}, [root]
        while stack:
            u = stack.pop()
            for v in scene.adjacency[u]:
                if v not in comp:
                    comp.add(v)
                    stack.append(v)
        comps.append(comp)
        left -= comp
    return comps


def load_scene(path) -> Scene:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"scene {path}: invalid JSON ({exc})") from None
    scene = Scene.from_dict(doc)
    validate_scene(scene)
    return scene


def scene_json(scene: Scene) -> str:
    return json.dumps(scene.to_dict(), indent=1) + "\n"


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(scene_json(scene), encoding="utf-8")


# ---------------------------------------------------------------- generation


def link_views(scene_positions: dict, adjacency: dict, node: int) -> dict:
    """Assign each neighbour the free view closest to its heading."""
    taken, out = set(), {}
    px, py, pz = scene_positions[node]
    for nb in sorted(adjacency[node]):
        qx, qy, qz = scene_positions[nb]
        az = math.atan2(qy - py, qx - px) % (2 * math.pi)
        horiz = math.hypot(qx - px, qy - py)
        el = math.atan2(qz - pz, horiz)
        row = 1 + max(-1, min(1, round(el / (math.pi / 6))))
        col = round(az / (2 * math.pi / VIEWS_PER_ROW)) % VIEWS_PER_ROW
        order = []
        for r in (row, 1, 0, 2):
            for dc in range(VIEWS_PER_ROW):
                for c in ((col + dc) % VIEWS_PER_ROW, (col - dc) % VIEWS_PER_ROW):
                    order.append(r * VIEWS_PER_ROW + c)
        view = next(v for v in order if v not in taken)
        taken.add(view)
        out[view] = nb
    return out


def _mst_edges(pos: np.ndarray) -> set:
    n = len(pos)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = np.linalg.norm(pos - pos[0], axis=1)
    parent = np.zeros(n, dtype=int)
    edges = set()
    for _ in range(n - 1):
        cand = np.where(in_tree, np.inf, best)
        v = int(np.argmin(cand))
        in_tree[v] = True
        p = int(parent[v])
        edges.add((min(v, p), max(v, p)))
        d = np.linalg.norm(pos - pos[v], axis=1)
        closer = (~in_tree) & (d < best)
        best[closer] = d[closer]
        parent[closer] = v
    return edges


def generate_scene(seed: int, n_nodes: int = 10, avg_degree: float = 3.0, n_objects: int = 10, n_episodes: int = 4, scene_id: str | None = None) -> Scene:
    """Random geometric graph in a 20m x 20m x 3m box, made connected by its MST."""
    if n_nodes < 2:
        raise ConfigError(f"n_nodes must be >= 2, got {n_nodes}")
    if not 1.0 <= avg_degree <= n_nodes - 1:
        raise ConfigError(f"avg_degree must lie in [1, {n_nodes - 1}], got {avg_degree}")
    if n_objects < 0 or n_episodes < 0:
        raise ConfigError("n_objects and n_episodes must be non-negative")
    from lgk.knowledge_base import NounLexicon

    rng = np.random.default_rng(seed)
    scene_id = scene_id or f"gen{seed}"
    pos = rng.uniform(0.0, 1.0, size=(n_nodes, 3)) * np.array(BOX)
    pairs = []
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            pairs.append((float(np.linalg.norm(pos[i] - pos[j])), i, j))
    pairs.sort()
    n_edges = int(round(n_nodes * avg_degree / 2))
    edge_set = {(i, j) for _, i, j in pairs[:n_edges]} | _mst_edges(pos)
    edges = sorted(edge_set)
    positions = {i: tuple(float(x) for x in pos[i]) for i in range(n_nodes)}
    adjacency = {i: [] for i in range(n_nodes)}
    for a, b in edges:
        adjacency[a].append(b)
        adjacency[b].append(a)

    panoramas = {}
    for n in range(n_nodes):
        links = link_views(positions, adjacency, n)
        views = []
        for v in range(N_VIEWS):
            az, el = view_angles(v)
            views.append(View(v, az, el, f"{scene_id}/feat/{n}/{v}", links.get(v)))
        panoramas[n] = views

    categories = sorted(NounLexicon.default().nouns)
    objects: dict = {}
    obj_cat = {}
    for j in range(n_objects):
        node = int(rng.integers(n_nodes))
        cat = categories[int(rng.integers(len(categories)))]
        oid = f"o{j}"
        objects.setdefault(node, []).append(SceneObject(oid, f"obj/{cat}"))
        obj_cat[oid] = cat

    episodes = []
    for e in range(n_episodes):
        start, goal = (int(x) for x in rng.choice(n_nodes, size=2, replace=False))
        target, word = None, "room"
        if objects.get(goal):
            obj = objects[goal][int(rng.integers(len(objects[goal])))]
            target, word = obj.obj_id, obj_cat[obj.obj_id]
        tokens = (CLS_TOKEN, "go", "to", "the", word)
        episodes.append(EpisodeSpec(f"{scene_id}-ep{e}", start, goal, tokens, ((4, 5),), target))
    scene = Scene(scene_id, positions, edges, panoramas, objects, episodes)
    validate_scene(scene)
    return scene
