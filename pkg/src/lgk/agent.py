"""Model-driven policies and batch evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass

from lgk.env.sim import STOP, Decision, run_episode, teacher_policy
from lgk.metrics import report, result_metrics
from lgk.model.features import instruction_inputs, step_inputs


@dataclass
class Agent:
    """Bundles a model with the embedding provider and knowledge matcher."""

    model: object
    provider: object
    matcher: object | None = None

    def _matcher(self):
        return self.matcher if self.model.config.use_knowledge else None

    def forward(self, scene, obs, instr):
        return self.model.forward_step(instr, step_inputs(obs, scene, self.provider, self._matcher()))

    def instruction(self, episode):
        return instruction_inputs(episode.tokens, episode.landmarks, self.provider)

    def policy(self, scene, episode) -> "ModelPolicy":
        return ModelPolicy(self, scene, self.instruction(episode))


class ModelPolicy:
    def __init__(self, agent: Agent, scene, instr):
        self.agent = agent
        self.scene = scene
        self.instr = instr

    def __call__(self, obs, state) -> Decision:
        out = self.agent.forward(self.scene, obs, self.instr)
        action = out.scores.best()
        i = out.scores.index(action)
        info = {"sigma": float(out.scores.sigma.data[0]), "score": float(out.scores.fused.data[i])}
        obj = out.predicted_object() if action == STOP else None
        return Decision(action, obj, info)

    def forced_stop_object(self, obs, state):
        return self.agent.forward(self.scene, obs, self.instr).predicted_object()


def evaluate(scenes, policy_for, max_steps=None) -> tuple:
    """Run every episode; returns ``(report, dumps)``.

    ``policy_for(scene, episode)`` builds the per-episode policy.
    """
    rows, dumps = [], []
    for scene in scenes:
        for ep in scene.episodes:
            res = run_episode(policy_for(scene, ep), scene, ep, max_steps)
            rows.append((scene.scene_id, ep.episode_id, result_metrics(scene, res, ep.target_object)))
            dumps.append(res.to_dump())
    return report(rows), dumps


def evaluate_parallel(scenes, policy_for, max_steps=None, workers: int = 2) -> tuple:
    """Thread-parallel :func:`evaluate`; results keep the serial order."""
    from concurrent.futures import ThreadPoolExecutor

    jobs = [(scene, ep) for scene in scenes for ep in scene.episodes]

    def run(job):
        scene, ep = job
        res = run_episode(policy_for(scene, ep), scene, ep, max_steps)
        return (scene.scene_id, ep.episode_id, result_metrics(scene, res, ep.target_object)), res.to_dump()

    with ThreadPoolExecutor(max_workers=workers) as pool:
        out = list(pool.map(run, jobs))
    return report([r for r, _ in out]), [d for _, d in out]


def teacher_for(scene, episode):
    return teacher_policy(scene, episode)


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=1) + "\n"
