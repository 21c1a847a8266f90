"""Turning observations into the raw arrays the network consumes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lgk.errors import ConfigError

N_DIR = 4
N_FLAGS = 3


def direction_features(az: float, el: float) -> np.ndarray:
    return np.array([math.sin(az), math.cos(az), math.sin(el), math.cos(el)])


@dataclass(frozen=True)
class InstructionInputs:
    tokens: np.ndarray
    spans: tuple

    @property
    def length(self) -> int:
        return self.tokens.shape[0]


@dataclass(frozen=True)
class StepInputs:
    node: int
    views: np.ndarray
    objects: np.ndarray | None
    object_ids: tuple
    knowledge: np.ndarray | None
    knowledge_ids: tuple
    map_nodes: tuple
    map_feats: np.ndarray
    candidates: dict

    @property
    def q(self) -> int:
        return 0 if self.knowledge is None else self.knowledge.shape[0]


def instruction_inputs(tokens, spans, provider) -> InstructionInputs:
    if not tokens:
        raise ConfigError("instruction needs at least the [CLS] token")
    emb = np.stack([provider.text_embed(t) for t in tokens])
    return InstructionInputs(emb, tuple(tuple(s) for s in spans))


def _view_feat(provider, view) -> np.ndarray:
    return np.concatenate([provider.image_embed(view.feat_key), direction_features(view.az, view.el)])


def step_inputs(obs, scene, provider, matcher=None) -> StepInputs:
    """Arrays for the current observation.

    Visited map nodes are described by their mean view embedding, frontier
    nodes by the views they were sighted through. Knowledge is looked up
    only when ``matcher`` is given.
    """
    views = np.stack([_view_feat(provider, v) for v in obs.views])
    objects = None
    if obs.objects:
        objects = np.stack([provider.image_embed(o.feat_key) for o in obs.objects])
    knowledge, kid = None, ()
    if matcher is not None:
        kid = tuple(matcher.step_knowledge(scene, obs.node))
        if kid:
            knowledge = np.stack([provider.text_embed(t) for t in matcher.texts(kid)])

    topo = obs.topo
    rows = []
    d_e = provider.dim
    for n in topo.order:
        visited = n in topo.visited
        if visited:
            emb = np.mean([provider.image_embed(v.feat_key) for v in scene.panoramas[n]], axis=0)
            dirs = np.zeros(N_DIR)
        else:
            seen = [scene.panoramas[o][v] for o, v in topo.sightings[n]]
            emb = np.mean([provider.image_embed(v.feat_key) for v in seen], axis=0)
            dirs = np.mean([direction_features(v.az, v.el) for v in seen], axis=0)
        flags = np.array([float(visited), float(n == topo.current), float(not visited)])
        rows.append(np.concatenate([emb[:d_e], dirs, flags]))
    return StepInputs(
        obs.node,
        views,
        objects,
        tuple(o.obj_id for o in obs.objects),
        knowledge,
        kid,
        tuple(topo.order),
        np.stack(rows),
        dict(obs.candidates),
    )
