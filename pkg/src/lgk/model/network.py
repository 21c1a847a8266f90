"""The knowledge-guided navigation network.

Pipeline per step: instruction encoder, landmark pooling, knowledge
refinement by landmarks (KGL), knowledge-object co-attention, gated
instruction augmentation (KGDA), local and global branches, and the
sigma-gated fusion of their action scores.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from lgk.autodiff import (
    ParamStore,
    Tensor,
    concat_cols,
    concat_rows,
    cross_entropy,
    gather,
    linear,
    mean_rows,
    multi_head_attention,
)
from lgk.autodiff.ops import (
    add,
    matmul,
    mul,
    reshape,
    rsub_scalar,
    scalar_mul,
    scale,
    sigmoid,
    take_rows,
)
from lgk.env.sim import STOP
from lgk.errors import ConfigError, ContractError, InvariantViolation
from lgk.model.config import ModelConfig
from lgk.model.features import N_DIR, N_FLAGS, InstructionInputs, StepInputs
from lgk.model.layers import FFN, CoLayer, CrossLayer, EncoderLayer, attention_params

log = logging.getLogger(__name__)


@dataclass
class ActionScores:
    actions: tuple
    fused: Tensor
    sigma: Tensor
    global_logits: Tensor
    local_logits: Tensor
    converted: Tensor
    legal: np.ndarray

    def index(self, action) -> int:
        try:
            return self.actions.index(action)
        except ValueError:
            raise ContractError(f"action {action!r} has no score") from None

    def as_dict(self) -> dict:
        return {a: float(s) for a, s in zip(self.actions, self.fused.data)}

    def best(self):
        vals = np.where(self.legal, self.fused.data, -np.inf)
        return self.actions[int(np.argmax(vals))]


@dataclass
class StepOutput:
    scores: ActionScores
    object_logits: Tensor | None
    object_ids: tuple
    trace: dict = field(default_factory=dict)

    def predicted_object(self):
        if self.object_logits is None:
            return None
        return self.object_ids[int(np.argmax(self.object_logits.data))]


class LGKModel:
    def __init__(self, config: ModelConfig | None = None, params: ParamStore | None = None):
        self.config = cfg = config or ModelConfig()
        self.params = p = params or ParamStore(cfg.seed)
        d, h, de, hid = cfg.d, cfg.n_heads, cfg.d_embed, cfg.d * cfg.ffn_mult
        g = d if cfg.gate_granularity == "element" else 1

        self.txt_w, self.txt_b = p.add("embed.text.w", (de, d)), p.add("embed.text.b", (d,), "zeros")
        self.pos = p.add("embed.pos", (cfg.max_len, d))
        self.view_w, self.view_b = p.add("embed.view.w", (de + N_DIR, d)), p.add("embed.view.b", (d,), "zeros")
        self.obj_w, self.obj_b = p.add("embed.obj.w", (de, d)), p.add("embed.obj.b", (d,), "zeros")
        self.map_w = p.add("embed.map.w", (de + N_DIR + N_FLAGS, d))
        self.map_b = p.add("embed.map.b", (d,), "zeros")
        self.cls_local = p.add("embed.cls_local", (1, d))
        self.stop_row = p.add("embed.stop_row", (1, d))

        self.text_layers = [EncoderLayer.build(p, f"text.{i}", d, h, hid) for i in range(cfg.n_text)]
        self.pano_layers = [EncoderLayer.build(p, f"pano.{i}", d, h, hid) for i in range(cfg.n_pano)]
        self.kgl = CrossLayer.build(p, "kgl", d, h, hid)
        self.xfuse = [CoLayer.build(p, f"xfuse.{i}", d, h, hid) for i in range(cfg.n_x)]
        self.kgda_attn = attention_params(p, "kgda.attn", d)
        self.kgda_wg, self.kgda_wc = p.add("kgda.w_g", (d, g)), p.add("kgda.w_c", (d, g))
        self.kgda_b = p.add("kgda.b_i", (g,), "zeros")
        self.local_layers = [CrossLayer.build(p, f"local.{i}", d, h, hid) for i in range(cfg.n_local)]
        self.ogate_wg, self.ogate_wc = p.add("objgate.w_g", (d, g)), p.add("objgate.w_c", (d, g))
        self.ogate_b = p.add("objgate.b", (g,), "zeros")
        self.local_stop = (p.add("local.stop.w", (d, 1)), p.add("local.stop.b", (1,), "zeros"))
        self.local_act = (p.add("local.act.w", (d, 1)), p.add("local.act.b", (1,), "zeros"))
        self.backtrack = p.add("local.backtrack", (1,), "zeros")
        self.global_layers = [CrossLayer.build(p, f"global.{i}", d, h, hid) for i in range(cfg.n_global)]
        # no output biases on softmax-only heads: a shared shift leaves the loss unchanged
        self.global_head = FFN.build(p, "global.head", d, d, 1, out_bias=False)
        self.fusion = FFN.build(p, "fusion", 2 * d, d, 1)
        self.obj_head = (p.add("objhead.w", (d, 1)),)
        self._ones = Tensor(np.ones((1, d)))

    # ------------------------------------------------------------ encoders

    def embed_text(self, emb: np.ndarray) -> Tensor:
        return linear(Tensor(emb), self.txt_w, self.txt_b)

    def encode_instruction(self, tokens) -> Tensor:
        """``[L x d]`` encoded instruction from ``[L x d_embed]`` token embeddings."""
        tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
        L = tokens.shape[0]
        if L > self.config.max_len:
            raise ConfigError(f"instruction length {L} exceeds max_len {self.config.max_len}")
        pos = take_rows(self.pos, range(L))
        x = add(linear(tokens, self.txt_w, self.txt_b), pos)
        for layer in self.text_layers:
            x = layer(x)
        return x

    @staticmethod
    def landmarks(encoded: Tensor, spans) -> Tensor | None:
        if not spans:
            return None
        return concat_rows([mean_rows(encoded, s, e) for s, e in spans])

    def kgl_forward(self, landmarks: Tensor | None, knowledge: Tensor, landmark_mask=None) -> Tensor:
        """Knowledge rows query the landmark rows, then self-attend, then FFN."""
        if landmarks is None:
            log.debug("no landmarks: knowledge passes through KGL unchanged")
            return knowledge
        return self.kgl(knowledge, landmarks, landmark_mask)

    def local_cross_modal_fuse(self, objects: Tensor, knowledge: Tensor | None) -> Tensor:
        if knowledge is None:
            log.debug("no knowledge: object stream bypasses co-attention")
            return objects
        for layer in self.xfuse:
            objects, knowledge = layer(objects, knowledge)
        return objects

    def _gate(self, a: Tensor, b: Tensor, wg: Tensor, wc: Tensor, bias: Tensor) -> Tensor:
        gate = sigmoid(add(add(matmul(a, wg), matmul(b, wc)), bias))
        if self.config.gate_granularity == "token":
            gate = matmul(gate, self._ones)
        return gate

    def kgda_forward(self, instr: Tensor, knowledge: Tensor | None, freeze_gate: bool | None = None) -> tuple:
        """``(A_f, I'', omega)``; the instruction passes through when there is no knowledge."""
        if knowledge is None:
            log.debug("no knowledge: instruction bypasses KGDA")
            return instr, None, None
        freeze = (not self.config.use_kgda_gate) if freeze_gate is None else freeze_gate
        aug = multi_head_attention(instr, knowledge, knowledge, self.kgda_attn, self.config.n_heads)
        if freeze:
            return add(scale(aug, 0.5), scale(instr, 0.5)), aug, None
        omega = self._gate(instr, aug, self.kgda_wg, self.kgda_wc, self.kgda_b)
        fused = add(mul(omega, aug), mul(rsub_scalar(1.0, omega), instr))
        return fused, aug, omega

    # ------------------------------------------------------------ branches

    def encode_pano(self, views: np.ndarray, objects: np.ndarray | None) -> tuple:
        rows = [self.cls_local, linear(Tensor(views), self.view_w, self.view_b)]
        n_obj = 0
        if objects is not None:
            rows.append(linear(Tensor(objects), self.obj_w, self.obj_b))
            n_obj = objects.shape[0]
        x = concat_rows(rows)
        for layer in self.pano_layers:
            x = layer(x)
        return x, n_obj

    def local_branch(self, stream: Tensor, n_obj: int, instr_fused: Tensor, obj_fused: Tensor | None, candidates: list) -> dict:
        """Local encoder, object gate and the local logits ``[STOP, candidate views...]``."""
        for layer in self.local_layers:
            stream = layer(stream, instr_fused)
        n_rows = stream.shape[0]
        view_rows = take_rows(stream, range(n_rows - n_obj))
        out = {"stream": stream, "obj_hat": None, "obj_gate": None, "obj_prime": None}
        if n_obj:
            obj_hat = take_rows(stream, range(n_rows - n_obj, n_rows))
            out["obj_hat"] = obj_hat
            if obj_fused is None:
                out["obj_prime"] = obj_hat
            else:
                w = self._gate(obj_hat, obj_fused, self.ogate_wg, self.ogate_wc, self.ogate_b)
                out["obj_gate"] = w
                out["obj_prime"] = add(mul(w, obj_fused), mul(rsub_scalar(1.0, w), obj_hat))
        cls_row = take_rows(view_rows, [0])
        stop = linear(cls_row, *self.local_stop)
        if candidates:
            cand = linear(take_rows(view_rows, [1 + v for v in candidates]), *self.local_act)
            logits = concat_rows([stop, cand])
        else:
            logits = stop
        out["cls"] = cls_row
        out["logits"] = reshape(logits, (logits.shape[0],))
        return out

    def global_branch(self, map_feats: np.ndarray, instr_fused: Tensor) -> dict:
        m = concat_rows([self.stop_row, linear(Tensor(map_feats), self.map_w, self.map_b)])
        for layer in self.global_layers:
            m = layer(m, instr_fused)
        logits = self.global_head(m)
        return {"encoded": m, "cls": take_rows(m, [0]), "logits": reshape(logits, (logits.shape[0],))}

    def dynamic_fusion(self, a_g: Tensor, a_l: Tensor, g_global: Tensor, g_local: Tensor, candidates: list, inputs: StepInputs) -> ActionScores:
        actions = (STOP,) + tuple(inputs.map_nodes)
        if g_global.shape[0] != len(actions):
            raise InvariantViolation("global logits do not cover the map")
        sigma = reshape(sigmoid(self.fusion(concat_cols([a_g, a_l]))), (1,))
        # local vector [STOP, candidates..., backtrack]; every map row indexes into it
        pool = concat_flat([g_local, self.backtrack])
        slot = {STOP: 0}
        for i, v in enumerate(candidates):
            slot[inputs.candidates[v]] = 1 + i
        back = len(candidates) + 1
        idx = [slot.get(a, back) for a in actions]
        missing = set(inputs.candidates.values()) - set(actions)
        if missing:
            raise InvariantViolation(f"candidate nodes {sorted(missing)} absent from the map")
        converted = gather(pool, idx)
        fused = add(scalar_mul(sigma, g_global), scalar_mul(rsub_scalar(1.0, sigma), converted))
        legal = np.array([a != inputs.node for a in actions])
        return ActionScores(actions, fused, sigma, g_global, g_local, converted, legal)

    def predict_object(self, obj_prime: Tensor | None) -> Tensor | None:
        if obj_prime is None:
            return None
        logits = linear(obj_prime, *self.obj_head)
        return reshape(logits, (logits.shape[0],))

    # ------------------------------------------------------------ full step

    def forward_step(self, instr: InstructionInputs, inputs: StepInputs) -> StepOutput:
        cfg = self.config
        trace: dict = {"bypass": []}
        enc = self.encode_instruction(instr.tokens)
        trace["instr"] = enc
        knowledge = None
        if cfg.use_knowledge and inputs.q > 0:
            knowledge = self.embed_text(inputs.knowledge)
        elif cfg.use_knowledge:
            trace["bypass"].append("q=0")
        trace["knowledge_raw"] = knowledge

        k_hat = knowledge
        if knowledge is not None and cfg.use_kgl:
            lm = self.landmarks(enc, instr.spans)
            if lm is None:
                trace["bypass"].append("p=0")
            k_hat = self.kgl_forward(lm, knowledge)
        trace["knowledge"] = k_hat

        if k_hat is not None and cfg.use_kgda:
            a_f, aug, omega = self.kgda_forward(enc, k_hat)
        else:
            a_f, aug, omega = enc, None, None
        trace.update(instr_fused=a_f, instr_aug=aug, omega=omega)

        stream, n_obj = self.encode_pano(inputs.views, inputs.objects)
        obj_bar = None
        if n_obj and k_hat is not None:
            obj_bar = self.local_cross_modal_fuse(take_rows(stream, range(stream.shape[0] - n_obj, stream.shape[0])), k_hat)
        trace["obj_bar"] = obj_bar

        candidates = sorted(inputs.candidates)
        local = self.local_branch(stream, n_obj, a_f, obj_bar, candidates)
        glob = self.global_branch(inputs.map_feats, a_f)
        trace.update(obj_hat=local["obj_hat"], obj_gate=local["obj_gate"], obj_prime=local["obj_prime"])
        scores = self.dynamic_fusion(glob["cls"], local["cls"], glob["logits"], local["logits"], candidates, inputs)
        obj_logits = self.predict_object(local["obj_prime"])
        return StepOutput(scores, obj_logits, inputs.object_ids, trace)

    def step_loss(self, out: StepOutput, teacher, target_object=None) -> Tensor:
        """Action cross-entropy, plus the weighted object term on STOP steps."""
        scores = out.scores
        i = scores.index(teacher)
        if not scores.legal[i]:
            raise ContractError(f"teacher action {teacher!r} is not legal")
        loss = cross_entropy(scores.fused, i, scores.legal)
        if (
            teacher == STOP
            and target_object is not None
            and out.object_logits is not None
            and target_object in out.object_ids
            and self.config.lambda_obj > 0
        ):
            obj = cross_entropy(out.object_logits, out.object_ids.index(target_object))
            loss = add(loss, scale(obj, self.config.lambda_obj))
        return loss


def concat_flat(ts) -> Tensor:
    return reshape(concat_rows([reshape(t, (t.shape[0], 1)) for t in ts]), (sum(t.shape[0] for t in ts),))
