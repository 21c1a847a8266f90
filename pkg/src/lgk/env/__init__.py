"""Discrete graph-world navigation environment."""

from lgk.env.graph import geodesic, path_length, shortest_path
from lgk.env.scene import (
    N_VIEWS,
    EpisodeSpec,
    Scene,
    SceneObject,
    View,
    generate_scene,
    load_scene,
    save_scene,
    scene_json,
    validate_scene,
)
from lgk.env.sim import (
    STOP,
    AgentState,
    Decision,
    EpisodeResult,
    Observation,
    initial_state,
    legal_actions,
    observe,
    replay,
    run_episode,
    step,
    teacher_action,
    teacher_policy,
)
