"""Behaviour cloning of the shortest-path teacher with scheduled sampling."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from lgk.agent import Agent, evaluate
from lgk.autodiff import ParamStore, Tape, backward
from lgk.env.sim import initial_state, observe, step, teacher_action
from lgk.errors import ConfigError, NumericalError, ValidationError
from lgk.model.config import ModelConfig
from lgk.model.network import LGKModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-2
    batch: int = 1
    sampling_ratio: float = 0.25
    sampling_start: int = 1
    clip_norm: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch < 1:
            raise ConfigError("epochs must be >= 0 and batch >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.sampling_ratio <= 1.0:
            raise ConfigError("sampling_ratio must lie in [0, 1]")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- checkpoints


def save_model(model: LGKModel, path) -> None:
    doc = {"config": model.config.to_dict(), "params": model.params.to_dict()}
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_model(path) -> LGKModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict) or "config" not in doc or "params" not in doc:
        raise ValidationError(f"checkpoint {path}: expected 'config' and 'params'")
    model = LGKModel(ModelConfig.from_dict(doc["config"]))
    model.params.load_dict(doc["params"])
    return model


# ---------------------------------------------------------------- training


def _episode_grads(agent: Agent, scene, episode, rng, sample_p: float, grads: dict) -> tuple:
    """Roll one episode out, accumulating step gradients into ``grads``."""
    model = agent.model
    instr = agent.instruction(episode)
    state = initial_state(scene, episode.start)
    losses, last = [], {}
    while not state.stopped and state.steps_taken < episode.max_steps:
        obs = observe(scene, state)
        teacher = teacher_action(scene, state, episode.goal)
        with Tape() as tape:
            out = agent.forward(scene, obs, instr)
            loss = model.step_loss(out, teacher, episode.target_object)
        for t, g in backward(loss, tape).items():
            acc = grads.get(t)
            grads[t] = g.copy() if acc is None else acc + g
        losses.append(loss.item())
        last = {"sigma": float(out.scores.sigma.data[0])}
        omega = out.trace.get("omega")
        if omega is not None:
            last["omega_mean"] = float(omega.data.mean())
        action = teacher
        if sample_p > 0 and rng.random() < sample_p:
            action = out.scores.best()
        state = step(scene, state, action)
    return losses, last


def _grad_norm(grads: dict) -> float:
    return math.sqrt(math.fsum(float(np.vdot(g, g)) for g in grads.values()))


def train(model: LGKModel, agent: Agent, scenes, cfg: TrainConfig, out_dir=None, on_epoch=None) -> list:
    """SGD over all training episodes; returns the per-epoch log rows.

    Every epoch writes ``checkpoint.json`` and appends to ``train_log.jsonl``
    under ``out_dir`` when given.
    """
    episodes = [(s, ep) for s in scenes for ep in s.episodes]
    if not episodes:
        raise ConfigError("no training episodes")
    rng = np.random.default_rng(cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "train_log.jsonl").write_text("", encoding="utf-8")
    params = list(model.params.values())
    history = []
    last: dict = {}
    for epoch in range(cfg.epochs):
        sample_p = cfg.sampling_ratio if epoch >= cfg.sampling_start else 0.0
        order = rng.permutation(len(episodes))
        epoch_losses = []
        norms = []
        for b0 in range(0, len(order), cfg.batch):
            grads: dict = {}
            n_steps = 0
            for j in order[b0 : b0 + cfg.batch]:
                scene, ep = episodes[j]
                try:
                    losses, last = _episode_grads(agent, scene, ep, rng, sample_p, grads)
                except NumericalError as exc:
                    raise NumericalError(
                        f"epoch {epoch} episode {ep.episode_id}: {exc}; last gates {last}; "
                        f"grad norm so far {_grad_norm(grads):.4g}"
                    ) from None
                epoch_losses.extend(losses)
                n_steps += len(losses)
            if not n_steps:
                continue
            norm = _grad_norm(grads) / n_steps
            norms.append(norm)
            if not math.isfinite(norm):
                raise NumericalError(f"epoch {epoch}: non-finite gradient norm; last gates {last}")
            factor = cfg.lr / n_steps
            if cfg.clip_norm is not None and norm > cfg.clip_norm:
                factor *= cfg.clip_norm / norm
            for t in params:
                g = grads.get(t)
                if g is not None:
                    t.data -= factor * g
        mean_loss = math.fsum(epoch_losses) / max(1, len(epoch_losses))
        if not math.isfinite(mean_loss):
            raise NumericalError(f"epoch {epoch}: loss is {mean_loss}")
        rep, _ = evaluate(scenes, agent.policy)
        row = {
            "epoch": epoch + 1,
            "loss": mean_loss,
            "train_sr": rep["summary"]["sr"],
            "steps": len(epoch_losses),
            "max_grad_norm": max(norms) if norms else 0.0,
        }
        history.append(row)
        log.info("epoch %d loss %.4f train SR %.3f", row["epoch"], row["loss"], row["train_sr"])
        if out is not None:
            save_model(model, out / "checkpoint.json")
            with open(out / "train_log.jsonl", "a", encoding="utf-8", newline="\n") as fh:
                fh.write(json.dumps(row) + "\n")
        if on_epoch is not None:
            on_epoch(row)
    return history


def fresh_model(cfg: ModelConfig) -> LGKModel:
    return LGKModel(cfg, ParamStore(cfg.seed))
