"""Agent state, observations, the shortest-path teacher and episode rollout."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from lgk.env.graph import path_length, shortest_path
from lgk.errors import ContractError, IllegalActionError

log = logging.getLogger(__name__)

STOP = "STOP"


@dataclass
class AgentState:
    current: int
    visited: set
    frontier: set
    order: list
    sightings: dict
    path: list
    steps_taken: int = 0
    stopped: bool = False

    def copy(self) -> "AgentState":
        return AgentState(
            self.current,
            set(self.visited),
            set(self.frontier),
            list(self.order),
            {k: list(v) for k, v in self.sightings.items()},
            list(self.path),
            self.steps_taken,
            self.stopped,
        )

    def known(self) -> set:
        return self.visited | self.frontier


@dataclass(frozen=True)
class TopoSnapshot:
    order: tuple
    visited: frozenset
    frontier: frozenset
    current: int
    sightings: dict
    """``{frontier node: [(observer node, view index)]}``."""


@dataclass(frozen=True)
class Observation:
    scene_id: str
    node: int
    views: tuple
    objects: tuple
    candidates: dict
    """``{view index: neighbour node}``."""
    topo: TopoSnapshot


def _visit(scene, state: AgentState, node: int) -> None:
    if node not in state.visited:
        state.visited.add(node)
        state.frontier.discard(node)
        if node not in state.order:
            state.order.append(node)
    for view, nb in scene.candidate_map(node).items():
        if nb in state.visited:
            continue
        if nb not in state.frontier:
            state.frontier.add(nb)
            state.order.append(nb)
        state.sightings.setdefault(nb, []).append((node, view))


def initial_state(scene, start: int) -> AgentState:
    state = AgentState(start, set(), set(), [], {}, [start])
    _visit(scene, state, start)
    return state


def observe(scene, state: AgentState) -> Observation:
    if state.stopped:
        raise ContractError("observe after STOP")
    node = state.current
    topo = TopoSnapshot(
        tuple(state.order),
        frozenset(state.visited),
        frozenset(state.frontier),
        node,
        {k: tuple(v) for k, v in state.sightings.items() if k in state.frontier},
    )
    return Observation(
        scene.scene_id,
        node,
        tuple(scene.panoramas[node]),
        tuple(scene.objects.get(node, ())),
        scene.candidate_map(node),
        topo,
    )


def legal_actions(scene, state: AgentState) -> set:
    return (state.frontier | set(scene.neighbors(state.current)) | state.visited) - {state.current}


def step(scene, state: AgentState, action) -> AgentState:
    """Apply ``action`` and return the successor state; ``state`` is untouched."""
    if state.stopped:
        raise ContractError("step after STOP")
    new = state.copy()
    new.steps_taken += 1
    if action == STOP:
        new.stopped = True
        return new
    if action not in legal_actions(scene, state):
        raise IllegalActionError(f"illegal action {action!r} at node {state.current}")
    if action in scene.neighbors(state.current):
        route = [state.current, action]
    else:
        route, _ = shortest_path(scene, state.current, action, allowed=state.visited)
    new.path.extend(route[1:])
    new.current = action
    _visit(scene, new, action)
    return new


def teacher_action(scene, state: AgentState, goal: int):
    if state.stopped:
        raise ContractError("teacher queried after STOP")
    if state.current == goal:
        return STOP
    return shortest_path(scene, state.current, goal)[0][1]


@dataclass(frozen=True)
class Decision:
    action: object
    object_id: str | None = None
    info: dict = field(default_factory=dict)


@dataclass
class EpisodeResult:
    scene_id: str
    episode_id: str
    start: int
    goal: int
    path: list
    actions: list
    stop_node: int
    predicted_object: str | None
    steps: list
    forced_stop: bool = False
    failed: bool = False
    diagnostic: str | None = None

    def to_dump(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "episode_id": self.episode_id,
            "start": self.start,
            "goal": self.goal,
            "actions": list(self.actions),
            "path": list(self.path),
            "stop_node": self.stop_node,
            "predicted_object": self.predicted_object,
            "forced_stop": self.forced_stop,
            "failed": self.failed,
            "diagnostic": self.diagnostic,
            "steps": self.steps,
        }


def _as_decision(out) -> Decision:
    if isinstance(out, Decision):
        return out
    if isinstance(out, tuple):
        return Decision(*out)
    return Decision(out)


def run_episode(policy, scene, episode, max_steps: int | None = None) -> EpisodeResult:
    """Roll ``policy(observation, state)`` out until STOP or the step cap.

    The policy returns an action, an ``(action, object_id)`` pair or a
    :class:`Decision`. Hitting the cap forces a STOP; a policy exposing
    ``forced_stop_object(observation, state)`` may still name an object.
    """
    cap = episode.max_steps if max_steps is None else max_steps
    if cap < 1:
        raise ContractError("max_steps must be >= 1")
    state = initial_state(scene, episode.start)
    actions, logs = [], []
    predicted, forced, failed, diag = None, False, False, None
    while True:
        obs = observe(scene, state)
        if state.steps_taken >= cap:
            forced = True
            hook = getattr(policy, "forced_stop_object", None)
            if hook is not None:
                predicted = hook(obs, state)
            break
        decision = _as_decision(policy(obs, state))
        try:
            new = step(scene, state, decision.action)
        except IllegalActionError as exc:
            failed, diag = True, str(exc)
            log.warning("episode %s: %s", episode.episode_id, exc)
            break
        entry = {"t": state.steps_taken, "action": decision.action, "topo_size": len(state.known())}
        entry.update(decision.info)
        logs.append(entry)
        actions.append(decision.action)
        state = new
        if decision.action == STOP:
            predicted = decision.object_id
            break
    return EpisodeResult(
        scene.scene_id,
        episode.episode_id,
        episode.start,
        episode.goal,
        list(state.path),
        actions,
        state.current,
        predicted,
        logs,
        forced,
        failed,
        diag,
    )


def teacher_policy(scene, episode):
    goal = episode.goal
    target = episode.target_object

    def policy(obs, state):
        action = teacher_action(scene, state, goal)
        return Decision(action, target if action == STOP else None)

    return policy


def replay(scene, dump: dict) -> list:
    """Re-execute recorded actions; returns the resulting path."""
    state = initial_state(scene, dump["start"])
    for action in dump["actions"]:
        state = step(scene, state, action)
    return state.path


def walk_length(scene, path) -> float:
    return path_length(scene, path)
