"""Hand-made scenes and model set-up shared by tests."""

import numpy as np

from lgk.env.scene import (
    CLS_TOKEN,
    N_VIEWS,
    EpisodeSpec,
    Scene,
    SceneObject,
    View,
    link_views,
    view_angles,
)
from lgk.model.features import N_DIR, N_FLAGS, InstructionInputs, StepInputs


def tiny_scene(positions: dict, edges, episodes=(), objects=None, scene_id="tiny") -> Scene:
    positions = {n: tuple(float(x) for x in p) for n, p in positions.items()}
    adjacency = {n: [] for n in positions}
    for a, b in edges:
        adjacency[a].append(b)
        adjacency[b].append(a)
    panoramas = {}
    for n in positions:
        links = link_views(positions, adjacency, n)
        panoramas[n] = [View(v, *view_angles(v), f"{scene_id}/feat/{n}/{v}", links.get(v)) for v in range(N_VIEWS)]
    objects = objects if objects is not None else {n: [SceneObject(f"o{n}", "obj/table")] for n in positions}
    return Scene(scene_id, positions, [list(e) for e in edges], panoramas, objects, list(episodes))


def episode(start, goal, target=None, max_steps=15, eid="e0") -> EpisodeSpec:
    return EpisodeSpec(eid, start, goal, (CLS_TOKEN, "go", "to", "the", "table"), ((4, 5),), target, max_steps)


# a 4-node fixture used for hand-traced routes: a path 0-1-2 (2 m edges) with 3 hanging off 1
FOUR = {0: (0, 0, 0), 1: (2, 0, 0), 2: (4, 0, 0), 3: (2, 2.5, 0)}
FOUR_EDGES = [(0, 1), (1, 2), (1, 3)]


BIAS_SUFFIXES = ("b", ".bq", ".bv", ".bo", ".b1", ".b2", ".beta", "b_i", "backtrack")


def randomize_biases(model, seed, scale=0.1):
    """Non-zero biases, so every parameter matters in gradient checks."""
    rng = np.random.default_rng(seed)
    for name, t in model.params.items():
        if name.endswith(BIAS_SUFFIXES):
            t.data[...] = rng.standard_normal(t.data.shape) * scale
    return model


def synthetic_inputs(rng, cfg, n_obj=3, q=4, n_map=4, cands=(2, 7)):
    de = cfg.d_embed
    map_nodes = tuple(range(10, 10 + n_map))
    return StepInputs(
        node=map_nodes[0],
        views=rng.standard_normal((36, de + N_DIR)),
        objects=rng.standard_normal((n_obj, de)) if n_obj else None,
        object_ids=tuple(f"o{i}" for i in range(n_obj)),
        knowledge=rng.standard_normal((q, de)) if q else None,
        knowledge_ids=tuple(range(q)),
        map_nodes=map_nodes,
        map_feats=rng.standard_normal((n_map, de + N_DIR + N_FLAGS)),
        candidates={v: map_nodes[1 + i] for i, v in enumerate(cands)},
    )


def instr(rng, cfg, L=6, spans=((1, 3), (4, 6))):
    return InstructionInputs(rng.standard_normal((L, cfg.d_embed)), spans)
