import math

import numpy as np
import pytest
import scalar_nets as sn
from builders import instr, randomize_biases, synthetic_inputs
from hypothesis import given, settings
from hypothesis import strategies as st

from lgk.agent import Agent
from lgk.autodiff import ParamStore, Tensor, grad_check, tsum
from lgk.autodiff.ops import mul
from lgk.env import STOP, generate_scene, initial_state, observe, step
from lgk.errors import ConfigError, ContractError
from lgk.knowledge_base import KnowledgeEntry
from lgk.matching import HashProvider, KnowledgeMatcher
from lgk.model import LGKModel, ModelConfig
from lgk.model.features import (
    InstructionInputs,
    StepInputs,
    direction_features,
    step_inputs,
)
from lgk.model.network import ActionScores, StepOutput

SMALL = dict(d=8, n_heads=2, d_embed=6, ffn_mult=2, max_len=12, n_text=1, n_pano=1, n_local=1, n_global=1, n_x=1)


def small_model(**kw):
    cfg = ModelConfig(**{**SMALL, **kw})
    return randomize_biases(LGKModel(cfg, ParamStore(cfg.seed)), cfg.seed + 100)


def rows(rng, n, d, scale=1.0):
    return Tensor(rng.standard_normal((n, d)) * scale)


# ---------------------------------------------------------------- features and config


def test_direction_features():
    assert np.allclose(direction_features(0.0, 0.0), [0, 1, 0, 1])
    assert np.allclose(direction_features(math.pi / 2, -math.pi / 6), [1, 0, -0.5, math.sqrt(3) / 2])


def test_config_validation_and_round_trip(tmp_path):
    with pytest.raises(ConfigError):
        ModelConfig(d=10, n_heads=4)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"d": 8, "bogus": 1})
    cfg = ModelConfig(**SMALL, use_kgl=False)
    (tmp_path / "c.json").write_text(__import__("json").dumps(cfg.to_dict()))
    assert ModelConfig.from_file(tmp_path / "c.json") == cfg
    assert cfg.structure_hash() == cfg.replace(use_kgl=True).structure_hash()
    assert cfg.config_hash() != cfg.replace(use_kgl=True).config_hash()


# ---------------------------------------------------------------- encoders


def test_instruction_encoder_shape_and_length_cap():
    m = small_model()
    rng = np.random.default_rng(0)
    assert m.encode_instruction(rng.standard_normal((5, 6))).shape == (5, 8)
    with pytest.raises(ConfigError):
        m.encode_instruction(rng.standard_normal((13, 6)))


def test_zero_layer_encoder_is_projection_plus_position():
    m = small_model(n_text=0)
    tok = np.random.default_rng(1).standard_normal((4, 6))
    want = tok @ m.txt_w.data + m.txt_b.data + m.pos.data[:4]
    assert np.allclose(m.encode_instruction(tok).data, want, atol=1e-14)


# ---------------------------------------------------------------- KGL


def test_kgl_single_landmark_cross_rows_equal():
    m = small_model()
    rng = np.random.default_rng(2)
    cross = m.kgl.cross.attend(rows(rng, 5, 8), rows(rng, 1, 8)).data
    assert np.allclose(cross, cross[0], atol=1e-14)


def test_kgl_matches_scalar_oracle():
    m = small_model(d=4, n_heads=2, d_embed=4)
    rng = np.random.default_rng(3)
    lm, kn = rows(rng, 2, 4), rows(rng, 2, 4)
    got = m.kgl_forward(lm, kn).data
    want = sn.cross_layer(sn.to_list(kn), sn.to_list(lm), m.kgl, 2)
    assert np.abs(got - np.array(want)).max() < 1e-12


def test_kgl_permutation_equivariance():
    m = small_model()
    rng = np.random.default_rng(4)
    lm, kn = rows(rng, 3, 8), rows(rng, 6, 8)
    perm = rng.permutation(6)
    a = m.kgl_forward(lm, kn).data
    b = m.kgl_forward(lm, Tensor(kn.data[perm])).data
    assert np.allclose(a[perm], b, atol=1e-12)


def test_kgl_masked_landmark_padding_is_inert():
    m = small_model()
    rng = np.random.default_rng(5)
    lm, kn = rows(rng, 2, 8), rows(rng, 4, 8)
    padded = Tensor(np.vstack([lm.data, rng.standard_normal((3, 8)) * 50]))
    mask = np.array([True, True, False, False, False])
    assert np.array_equal(m.kgl_forward(lm, kn).data, m.kgl_forward(padded, kn, mask).data)


def test_kgl_without_landmarks_passes_through():
    m = small_model()
    kn = rows(np.random.default_rng(6), 3, 8)
    assert m.kgl_forward(None, kn) is kn


# ---------------------------------------------------------------- KGDA


def test_kgda_matches_scalar_oracle():
    m = small_model(d=4, n_heads=2, d_embed=4)
    rng = np.random.default_rng(7)
    i_, k_ = rows(rng, 3, 4), rows(rng, 2, 4)
    fused, aug, omega = m.kgda_forward(i_, k_)
    w_f, w_a, w_o = sn.kgda(sn.to_list(i_), sn.to_list(k_), m, 2)
    for got, want in ((fused, w_f), (aug, w_a), (omega, w_o)):
        assert np.abs(got.data - np.array(want)).max() < 1e-12


def test_kgda_neutral_gate():
    m = small_model()
    for t in (m.kgda_wg, m.kgda_wc, m.kgda_b):
        t.data[...] = 0.0
    rng = np.random.default_rng(8)
    i_, k_ = rows(rng, 4, 8), rows(rng, 3, 8)
    fused, aug, omega = m.kgda_forward(i_, k_)
    assert np.all(omega.data == 0.5)
    assert np.allclose(fused.data, (i_.data + aug.data) / 2, atol=1e-15)


@pytest.mark.parametrize("bias, target", [(-30.0, "instr"), (30.0, "aug")])
def test_kgda_saturated_gate(bias, target):
    m = small_model()
    m.kgda_wg.data[...] = 0.0
    m.kgda_wc.data[...] = 0.0
    m.kgda_b.data[...] = bias
    rng = np.random.default_rng(9)
    i_, k_ = rows(rng, 4, 8), rows(rng, 3, 8)
    fused, aug, _ = m.kgda_forward(i_, k_)
    ref = i_.data if target == "instr" else aug.data
    assert np.abs(fused.data - ref).max() < 1e-9


def test_kgda_frozen_gate_and_token_granularity():
    m = small_model(use_kgda_gate=False)
    rng = np.random.default_rng(10)
    i_, k_ = rows(rng, 4, 8), rows(rng, 3, 8)
    fused, aug, omega = m.kgda_forward(i_, k_)
    assert omega is None
    assert np.allclose(fused.data, 0.5 * aug.data + 0.5 * i_.data, atol=1e-15)
    t = small_model(gate_granularity="token")
    _, _, om = t.kgda_forward(i_, k_)
    assert om.shape == (4, 8) and np.all(om.data == om.data[:, :1])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 20.0))
def test_gates_strictly_inside_unit_interval(seed, spread):
    m = small_model()
    rng = np.random.default_rng(seed)
    _, _, omega = m.kgda_forward(rows(rng, 5, 8, spread), rows(rng, 3, 8, spread))
    assert np.all((omega.data > 0) & (omega.data < 1))
    out = m.forward_step(instr(rng, m.config), synthetic_inputs(rng, m.config))
    s = out.scores.sigma.data[0]
    assert 0 < s < 1


# ---------------------------------------------------------------- branches and fusion


def test_local_branch_cardinality_and_closed_object_gate():
    m = small_model()
    rng = np.random.default_rng(11)
    inp = synthetic_inputs(rng, m.config)
    m.ogate_b.data[...] = -800.0
    m.ogate_wg.data[...] = 0.0
    m.ogate_wc.data[...] = 0.0
    out = m.forward_step(instr(rng, m.config), inp)
    tr = out.trace
    assert out.scores.local_logits.shape == (len(inp.candidates) + 1,)
    assert np.array_equal(tr["obj_prime"].data, tr["obj_hat"].data)
    assert out.object_logits.shape == (3,)


def test_global_branch_cardinality_and_single_node_map():
    m = small_model()
    rng = np.random.default_rng(12)
    out = m.forward_step(instr(rng, m.config), synthetic_inputs(rng, m.config, n_map=5, cands=(1,)))
    assert out.scores.global_logits.shape == (5 + 1,)
    lone = synthetic_inputs(rng, m.config, n_map=1, cands=())
    out = m.forward_step(instr(rng, m.config), lone)
    assert out.scores.actions == (STOP, lone.node)
    assert out.scores.best() == STOP


def test_dynamic_fusion_hand_example():
    m = small_model()
    rng = np.random.default_rng(13)
    inp = synthetic_inputs(rng, m.config, n_map=4, cands=(5,))
    # map: current 10, B=11 adjacent via view 5, C=12 and 13 not adjacent
    m.backtrack.data[...] = -1.0
    g_local = Tensor(np.array([0.3, 2.0]))
    g_global = Tensor(rng.standard_normal(5))
    a = rows(rng, 1, 8)
    sc = m.dynamic_fusion(a, a, g_global, g_local, [5], inp)
    conv = dict(zip(sc.actions, sc.converted.data))
    assert conv == {STOP: 0.3, 10: -1.0, 11: 2.0, 12: -1.0, 13: -1.0}
    s = sc.sigma.data[0]
    assert np.all(sc.fused.data - (s * g_global.data + (1 - s) * sc.converted.data) == 0.0)
    assert sc.legal.tolist() == [True, False, True, True, True]


def test_dynamic_fusion_neutral_and_saturated_sigma():
    m = small_model()
    rng = np.random.default_rng(14)
    inp = synthetic_inputs(rng, m.config)
    for t in (m.fusion.w1, m.fusion.b1, m.fusion.w2, m.fusion.b2):
        t.data[...] = 0.0
    out = m.forward_step(instr(rng, m.config), inp)
    sc = out.scores
    assert sc.sigma.data[0] == 0.5
    assert np.allclose(sc.fused.data, (sc.global_logits.data + sc.converted.data) / 2, atol=1e-15)
    m.fusion.b2.data[...] = 60.0
    sc = m.forward_step(instr(rng, m.config), inp).scores
    assert np.argmax(sc.fused.data) == np.argmax(sc.global_logits.data)


def test_object_head_is_row_wise():
    m = small_model()
    rng = np.random.default_rng(15)
    o = rows(rng, 4, 8)
    perm = [2, 0, 3, 1]
    assert np.allclose(m.predict_object(Tensor(o.data[perm])).data, m.predict_object(o).data[perm], atol=1e-15)


def test_step_loss_uniform_and_illegal_teacher():
    m = small_model()
    names = (STOP, 1, 2, 3, 4)
    z = Tensor(np.zeros(5))
    legal = np.array([True, False, True, True, True])
    sc = ActionScores(names, z, Tensor([0.5]), z, z, z, legal)
    out = StepOutput(sc, None, ())
    assert m.step_loss(out, 2).item() == pytest.approx(math.log(4), abs=1e-15)
    with pytest.raises(ContractError):
        m.step_loss(out, 1)
    margin = Tensor(np.array([0.0, 0.0, 60.0, 0.0, 0.0]))
    sharp = StepOutput(ActionScores(names, margin, Tensor([0.5]), margin, margin, margin, legal), None, ())
    assert m.step_loss(sharp, 2).item() < 1e-24


def test_object_term_only_on_stop():
    m = small_model()
    rng = np.random.default_rng(16)
    inp = synthetic_inputs(rng, m.config)
    out = m.forward_step(instr(rng, m.config), inp)
    base = m.step_loss(out, STOP).item()
    with_obj = m.step_loss(out, STOP, "o1").item()
    assert with_obj > base
    assert m.step_loss(out, 11, "o1").item() == m.step_loss(out, 11).item()


# ---------------------------------------------------------------- bypasses and toggles


def test_bypasses():
    rng = np.random.default_rng(17)
    m = small_model()
    i_ = instr(rng, m.config)
    no_k = synthetic_inputs(rng, m.config, q=0)
    out = m.forward_step(i_, no_k)
    assert out.trace["bypass"] == ["q=0"]
    assert out.trace["instr_fused"] is out.trace["instr"]
    assert out.trace["obj_prime"] is out.trace["obj_hat"]
    no_lm = InstructionInputs(i_.tokens, ())
    out = m.forward_step(no_lm, synthetic_inputs(rng, m.config))
    assert out.trace["bypass"] == ["p=0"]
    assert out.trace["knowledge"] is out.trace["knowledge_raw"]
    m2 = small_model(use_kgl=False)
    out = m2.forward_step(i_, synthetic_inputs(rng, m2.config))
    assert out.trace["knowledge"] is out.trace["knowledge_raw"]
    m3 = small_model(use_kgda=False)
    out = m3.forward_step(i_, synthetic_inputs(rng, m3.config))
    assert out.trace["instr_fused"] is out.trace["instr"]


def test_co_attention_bypass_without_knowledge():
    m = small_model()
    o = rows(np.random.default_rng(18), 3, 8)
    assert m.local_cross_modal_fuse(o, None) is o
    assert m.local_cross_modal_fuse(o, rows(np.random.default_rng(19), 2, 8)).shape == (3, 8)


def scene_setup(seed=0):
    scene = generate_scene(seed, n_nodes=6)
    prov = HashProvider(6, 1)
    ep = scene.episodes[0]
    state = step(scene, initial_state(scene, ep.start), scene.neighbors(ep.start)[0])
    return scene, prov, ep, observe(scene, state)


def make_kb(words, n):
    return [KnowledgeEntry(i, f"{words[i % len(words)]} thing {i}", (words[i % len(words)],), True) for i in range(n)]


def test_baseline_ignores_kb_content():
    scene, prov, ep, obs = scene_setup()
    m = small_model(use_knowledge=False)
    outs = []
    for kb in (make_kb(["table", "lamp"], 30), make_kb(["sofa"], 3)):
        agent = Agent(m, prov, KnowledgeMatcher(kb, prov))
        outs.append(agent.forward(scene, obs, agent.instruction(ep)))
    assert np.array_equal(outs[0].scores.fused.data, outs[1].scores.fused.data)
    assert outs[0].trace["instr_fused"] is outs[0].trace["instr"]


def test_knowledge_is_an_unordered_set():
    scene, prov, ep, obs = scene_setup(1)
    m = small_model()
    agent = Agent(m, prov, KnowledgeMatcher(make_kb(["table", "lamp", "chair"], 40), prov))
    inp = step_inputs(obs, scene, prov, agent.matcher)
    perm = np.random.default_rng(0).permutation(inp.q)
    shuffled = StepInputs(**{**inp.__dict__, "knowledge": inp.knowledge[perm]})
    e = agent.instruction(ep)
    a, b = m.forward_step(e, inp), m.forward_step(e, shuffled)
    assert np.allclose(a.scores.fused.data, b.scores.fused.data, atol=1e-12)


def test_forward_is_deterministic():
    scene, prov, ep, obs = scene_setup(2)
    kb = make_kb(["table", "lamp"], 20)
    outs = []
    for _ in range(2):
        m = small_model()
        agent = Agent(m, prov, KnowledgeMatcher(kb, prov))
        outs.append(agent.forward(scene, obs, agent.instruction(ep)))
    assert np.array_equal(outs[0].scores.fused.data, outs[1].scores.fused.data)
    assert np.array_equal(outs[0].object_logits.data, outs[1].object_logits.data)


# ---------------------------------------------------------------- gradient checks


def weighted(t, seed=0):
    w = Tensor(np.random.default_rng(seed).standard_normal(t.shape))
    return tsum(mul(t, w))


def params_of(model, *prefixes):
    return {n: t for n, t in model.params.items() if n.startswith(prefixes)}


def check(f, params):
    rep = grad_check(f, params)
    assert rep.max_rel_err < 1e-4, rep
    return rep


def test_grad_kgl():
    m = small_model()
    rng = np.random.default_rng(20)
    lm, kn = Tensor(rng.standard_normal((2, 8)), requires_grad=True), Tensor(rng.standard_normal((3, 8)), requires_grad=True)
    check(lambda: weighted(m.kgl_forward(lm, kn)), {"lm": lm, "kn": kn, **params_of(m, "kgl.")})


def test_grad_co_attention():
    m = small_model()
    rng = np.random.default_rng(21)
    o, k = Tensor(rng.standard_normal((3, 8)), requires_grad=True), Tensor(rng.standard_normal((2, 8)), requires_grad=True)
    check(lambda: weighted(m.local_cross_modal_fuse(o, k)), {"o": o, "k": k, **params_of(m, "xfuse.")})


def test_grad_kgda():
    m = small_model()
    rng = np.random.default_rng(22)
    i_, k_ = Tensor(rng.standard_normal((4, 8)), requires_grad=True), Tensor(rng.standard_normal((3, 8)), requires_grad=True)
    check(lambda: weighted(m.kgda_forward(i_, k_)[0]), {"i": i_, "k": k_, **params_of(m, "kgda.")})


def test_grad_instruction_encoder():
    m = small_model()
    tok = np.random.default_rng(23).standard_normal((5, 6))
    check(lambda: weighted(m.encode_instruction(tok)), params_of(m, "text.", "embed.text", "embed.pos"))


@pytest.mark.parametrize("prefixes", [("local.", "objgate.", "pano.", "embed.view", "embed.obj", "embed.cls_local"), ("global.", "embed.map", "embed.stop_row"), ("fusion.", "local.backtrack"), ("objhead.",)])
def test_grad_branches_through_step_loss(prefixes):
    m = small_model()
    rng = np.random.default_rng(24)
    e, inp = instr(rng, m.config), synthetic_inputs(rng, m.config)
    teacher = STOP if prefixes == ("objhead.",) else 12

    def f():
        return m.step_loss(m.forward_step(e, inp), teacher, "o2")

    check(f, params_of(m, *prefixes))


def test_grad_full_step_loss_every_parameter():
    m = small_model()
    rng = np.random.default_rng(25)
    e, inp = instr(rng, m.config), synthetic_inputs(rng, m.config)
    rep = grad_check(lambda: m.step_loss(m.forward_step(e, inp), STOP, "o0"), dict(m.params.items()), max_entries=6, seed=1)
    assert rep.max_rel_err < 1e-4, rep
