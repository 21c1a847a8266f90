"""Synthetic "twin" scene fixture where only knowledge identifies the goal.

Ten viewpoints per scene: a corridor ``c0..c4`` with a side room off each
corridor node. Corridor nodes ``c1..c3`` each hold a table. Instructions
read "walk to the table by the <landmark>". Scenes come in groups whose
members look identical to a knowledge-free agent and share the landmark,
but the goal table differs per member. The only scene-specific signal is
the sub-region embeddings at the goal table, planted to match the
KB entries for the landmark.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lgk.env.scene import (
    CLS_TOKEN,
    N_VIEWS,
    EpisodeSpec,
    Scene,
    SceneObject,
    View,
    link_views,
    save_scene,
    validate_scene,
    view_angles,
)
from lgk.knowledge_base import NounLexicon, RawRecord, build_kb, save_kb, save_records
from lgk.matching import QUADRANTS, FixtureProvider, save_fixture, view_key

POSITIONS = {
    0: (0.0, 0.0, 0.0),
    1: (4.0, 0.0, 0.0),
    2: (8.0, 0.0, 0.0),
    3: (12.0, 0.0, 0.0),
    4: (16.0, 0.0, 0.0),
    5: (0.0, 3.5, 0.0),
    6: (4.0, 3.5, 0.0),
    7: (8.0, 3.5, 0.0),
    8: (12.0, 3.5, 0.0),
    9: (16.0, 3.5, 0.0),
}
EDGES = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 5), (1, 6), (2, 7), (3, 8), (4, 9), (6, 7)]
TABLES = (1, 2, 3)
STARTS = (0, 5, 4, 9)
LANDMARKS = ("fireplace", "window", "door")
VERBS = ("near", "beside", "facing", "by", "behind")
FILLER = {"lamp": ("small", "old", "tall", "brass", "bright"), "chair": ("wooden", "red", "dark", "low", "soft"), "sofa": ("grey", "long", "leather", "blue", "big")}
BLANK = (("very", "bright"), ("quite", "dark"), ("rather", "quiet"))
PLANTED_QUADS = QUADRANTS
GROUPS = ((0, 1), (2, 3, 4))
ROOM_OBJECTS = {5: ("sofa", "lamp"), 6: ("chair",), 7: ("lamp",), 8: ("sofa",), 9: ("chair", "lamp")}


def _unit(seed: int, namespace: str, key: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}\x1f{namespace}\x1f{key}".encode()).digest()
    v = np.random.default_rng(int.from_bytes(digest[:8], "little")).standard_normal(dim)
    return v / np.linalg.norm(v)


def compositional_text(text: str, seed: int, dim: int) -> np.ndarray:
    """Normalised sum of per-word vectors, so shared words mean shared directions."""
    v = np.sum([_unit(seed, "word", w, dim) for w in text.split()], axis=0)
    return v / np.linalg.norm(v)


def twin_records() -> list:
    recs = [RawRecord("svo_triple", (lm, verb, "table")) for lm in LANDMARKS for verb in VERBS]
    recs += [RawRecord("attribute_pair", (adj, noun)) for noun, adjs in FILLER.items() for adj in adjs]
    recs += [RawRecord("attribute_pair", pair) for pair in BLANK]
    return recs


def landmark_key(landmark: str) -> str:
    """The KB2 noun string of the planted entries for ``landmark``."""
    return f"{landmark} table"


@dataclass
class TwinFixture:
    scenes: list
    records: list
    kb: list
    table: dict

    def provider(self) -> FixtureProvider:
        return FixtureProvider(self.table)

    def write(self, root) -> dict:
        root = Path(root)
        (root / "scenes").mkdir(parents=True, exist_ok=True)
        paths = {"scenes": []}
        for s in self.scenes:
            p = root / "scenes" / f"{s.scene_id}.json"
            save_scene(s, p)
            paths["scenes"].append(str(p))
        save_records(self.records, root / "records.jsonl")
        save_kb(self.kb, root / "kb.jsonl")
        save_fixture(self.table, root / "embeddings.jsonl")
        paths.update(records=str(root / "records.jsonl"), kb=str(root / "kb.jsonl"), embeddings=str(root / "embeddings.jsonl"))
        return paths


def _scene_shift(index: int) -> tuple:
    for g, members in enumerate(GROUPS):
        if index in members:
            return g, members.index(index)
    raise ValueError(index)


def build_twin_fixture(seed: int = 0, dim: int = 32) -> TwinFixture:
    lexicon = NounLexicon.default()
    records = twin_records()
    kb = build_kb(records, lexicon)
    table: dict = {}

    def text(t):
        if t not in table:
            table[t] = compositional_text(t, seed, dim)

    for e in kb:
        text(e.kb1_text)
        if e.retrievable:
            text(" ".join(e.kb2_nouns))

    adjacency = {n: [] for n in POSITIONS}
    for a, b in EDGES:
        adjacency[a].append(b)
        adjacency[b].append(a)
    fillers = sorted(FILLER)
    scenes = []
    for index in range(sum(len(g) for g in GROUPS)):
        group, shift = _scene_shift(index)
        sid = f"twin{index}"
        panoramas = {}
        for n in POSITIONS:
            links = link_views(POSITIONS, adjacency, n)
            views = []
            for v in range(N_VIEWS):
                az, el = view_angles(v)
                key = f"twin-g{group}/feat/{n}/{v}"
                table.setdefault(key, _unit(seed, "image", key, dim))
                views.append(View(v, az, el, key, links.get(v)))
            panoramas[n] = views
        objects = {}
        for t in TABLES:
            objects[t] = [SceneObject(f"c{t}_table", "obj/table"), SceneObject(f"c{t}_chair", "obj/chair")]
        for n, cats in ROOM_OBJECTS.items():
            objects[n] = [SceneObject(f"r{n}_{c}", f"obj/{c}") for c in cats]
        for objs in objects.values():
            for o in objs:
                table.setdefault(o.feat_key, _unit(seed, "image", o.feat_key, dim))

        landmark = LANDMARKS[group]
        goal = TABLES[shift]
        landmark_of = {goal: landmark}
        for n in POSITIONS:
            for v, nb in links_of(panoramas[n]).items():
                planted = landmark_of.get(n)
                for quad in QUADRANTS:
                    sub = f"{view_key(sid, n, v)}/{quad}"
                    if planted is not None and quad in PLANTED_QUADS:
                        table[sub] = table[landmark_key(planted)]
                    else:
                        pick = int.from_bytes(hashlib.sha256(f"{seed}/{sub}".encode()).digest()[:4], "little")
                        table[sub] = table[fillers[pick % len(fillers)]]

        episodes = []
        tokens = (CLS_TOKEN, "walk", "to", "the", "table", "by", "the", landmark)
        for tok in tokens:
            text(tok)
        for start in STARTS:
            episodes.append(EpisodeSpec(f"{sid}-s{start}", start, goal, tokens, ((7, 8),), f"c{goal}_table"))
        scene = Scene(sid, dict(POSITIONS), list(EDGES), panoramas, objects, episodes)
        validate_scene(scene)
        scenes.append(scene)
    return TwinFixture(scenes, records, kb, table)


def links_of(views) -> dict:
    return {v.view: v.link for v in views if v.link is not None}
