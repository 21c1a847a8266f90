import random
from fractions import Fraction

import pytest
from builders import episode, tiny_scene
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_metrics

from lgk.env import STOP, generate_scene, run_episode
from lgk.env.sim import legal_actions
from lgk.errors import ContractError
from lgk.metrics import (
    METRIC_KEYS,
    EpisodeMetrics,
    aggregate,
    episode_metrics,
    navigation_error,
    oracle_success,
    report,
    result_metrics,
    rgs,
    rgspl,
    spl,
    success,
    validate_report,
)

LINE = {0: (0, 0, 0), 1: (2.5, 0, 0), 2: (5.5, 0, 0), 3: (9.5, 0, 0)}
LINE_EDGES = [(0, 1), (1, 2), (2, 3)]


def test_navigation_error_examples():
    s = tiny_scene(LINE, LINE_EDGES)
    assert navigation_error(s, 1, 1) == 0.0
    assert navigation_error(s, 0, 1) == 2.5
    assert navigation_error(s, 0, 3) == 9.5


def test_success_boundary():
    assert success(0.0) == 1
    assert success(3.0) == 1
    assert success(3.0001) == 0


def test_exact_three_metre_stop_succeeds():
    s = tiny_scene({0: (0, 0, 0), 1: (3, 0, 0)}, [(0, 1)])
    m = episode_metrics(s, [0], 0, 1, 0)
    assert m.ne_m == 3.0 and m.sr == 1


def test_oracle_success_examples():
    s = tiny_scene(LINE, LINE_EDGES)
    # node 1 lies 2.5 m from goal 0, the stop at 3 lies 9.5 m away
    assert oracle_success(s, [0, 1, 2, 3], 0) == 1
    assert success(navigation_error(s, 3, 0)) == 0
    assert oracle_success(s, [3], 0) == 0
    with pytest.raises(ContractError):
        oracle_success(s, [], 0)


def test_spl_examples():
    assert spl(1, 10.0, 10.0) == 1.0
    assert spl(1, 10.0, 20.0) == 0.5
    assert spl(0, 10.0, 10.0) == 0.0
    assert spl(1, 0.0, 0.0) == 1.0
    assert spl(1, 0.0, 4.0) == 0.0


def test_rgs_and_rgspl_examples():
    assert rgs(1, "o", "o") == 1
    assert rgs(0, "o", "o") == 0
    assert rgs(1, "p", "o") == 0
    assert rgs(1, None, "o") == 0
    assert rgspl(1, 10.0, 10.0) == 1.0
    assert rgspl(1, 10.0, 20.0) == 0.5
    assert rgspl(0, 10.0, 10.0) == 0.0


def test_aggregate_examples():
    m1 = EpisodeMetrics(1.0, 1, 1, 0.5, None, None, 4.0, 2.0)
    assert aggregate([m1]) == {**m1.to_dict(), "count": 1}
    m0 = EpisodeMetrics(5.0, 0, 1, 0.0, None, None, 6.0, 2.0)
    assert aggregate([m1, m0])["sr"] == 0.5
    with pytest.raises(ContractError):
        aggregate([])


def wander(scene, ep, seed, cap):
    rng = random.Random(seed)

    def pol(obs, state):
        if rng.random() < 0.2:
            return STOP, rng.choice(sorted(scene.object_ids()) or [None])
        return rng.choice(sorted(legal_actions(scene, state)))

    return run_episode(pol, scene, ep, max_steps=cap)


def test_metrics_match_enumeration_oracle():
    for seed in range(50):
        s = generate_scene(seed, n_nodes=4 + seed % 5, n_objects=4)
        for i, ep in enumerate(s.episodes):
            res = wander(s, ep, seed * 10 + i, 1 + (seed + i) % 8)
            got = result_metrics(s, res, ep.target_object).to_dict()
            want = brute_metrics(s.positions, s.adjacency, res.path, ep.goal, ep.start, res.predicted_object, ep.target_object)
            for k, v in want.items():
                assert got[k] == v, (seed, i, k)
            if ep.target_object is None:
                assert got["rgs"] is None and got["rgspl"] is None


def random_metrics(rng, n):
    out = []
    for _ in range(n):
        sr = rng.random() < 0.5
        shortest = rng.uniform(0, 10)
        taken = shortest + rng.uniform(0, 10)
        r = None if rng.random() < 0.3 else int(sr and rng.random() < 0.5)
        out.append(
            EpisodeMetrics(
                rng.uniform(0, 3) if sr else rng.uniform(3.1, 9),
                int(sr),
                int(sr or rng.random() < 0.5),
                spl(sr, shortest, taken),
                r,
                None if r is None else rgspl(r, shortest, taken),
                taken,
                shortest,
            )
        )
    return out


def test_aggregate_matches_accumulation_oracle():
    rng = random.Random(0)
    ms = random_metrics(rng, 50)
    got = aggregate(ms)
    for k in METRIC_KEYS:
        vals = [Fraction(getattr(m, k)) for m in ms if getattr(m, k) is not None]
        assert got[k] == pytest.approx(float(sum(vals) / len(vals)), rel=1e-15)
    assert got["count"] == 50


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_aggregate_is_order_invariant(seed, n):
    rng = random.Random(seed)
    ms = random_metrics(rng, n)
    shuffled = list(ms)
    rng.shuffle(shuffled)
    assert aggregate(ms) == aggregate(shuffled)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 10))
def test_per_episode_invariants(seed, cap):
    s = generate_scene(seed, n_nodes=6, n_objects=5)
    ep = s.episodes[0]
    m = result_metrics(s, wander(s, ep, seed, cap), ep.target_object)
    assert 0 <= m.spl <= m.sr
    assert m.osr >= m.sr
    if m.rgs is not None:
        assert 0 <= m.rgspl <= m.rgs
    if m.path_len_m == m.shortest_len_m:
        assert m.spl == m.sr


def test_report_schema():
    s = tiny_scene(LINE, LINE_EDGES)
    res = run_episode(lambda o, st: STOP, s, episode(0, 1, target="o0"))
    doc = report([(s.scene_id, "e0", result_metrics(s, res, "o0"))])
    validate_report(doc)
    assert list(doc["episodes"][0]) == ["scene_id", "episode_id", *METRIC_KEYS]
    doc["summary"]["count"] = 3
    with pytest.raises(ContractError):
        validate_report(doc)
