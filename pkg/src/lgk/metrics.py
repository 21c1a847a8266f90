"""Navigation metrics: NE, SR, OSR, SPL, RGS and RGSPL."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from lgk.env.graph import path_length, shortest_path
from lgk.errors import ContractError

log = logging.getLogger(__name__)

SUCCESS_RADIUS = 3.0
METRIC_KEYS = ("ne_m", "sr", "osr", "spl", "rgs", "rgspl", "path_len_m", "shortest_len_m")


def navigation_error(scene, stop_node: int, goal: int) -> float:
    return shortest_path(scene, stop_node, goal)[1]


def success(ne_m: float) -> int:
    return int(ne_m <= SUCCESS_RADIUS)


def oracle_success(scene, path, goal: int) -> int:
    if not path:
        raise ContractError("empty path")
    return int(any(navigation_error(scene, n, goal) <= SUCCESS_RADIUS for n in set(path)))


def _weighted(flag: int, shortest_len: float, path_len: float) -> float:
    if not flag:
        return 0.0
    denom = max(path_len, shortest_len)
    if denom == 0.0:
        return 1.0
    return shortest_len / denom


def spl(sr: int, shortest_len_m: float, path_len_m: float) -> float:
    return _weighted(sr, shortest_len_m, path_len_m)


def rgs(sr: int, predicted_object, target_object) -> int:
    if predicted_object is None:
        log.info("no object prediction; rgs = 0")
        return 0
    return int(bool(sr) and predicted_object == target_object)


def rgspl(rgs_value: int, shortest_len_m: float, path_len_m: float) -> float:
    return _weighted(rgs_value, shortest_len_m, path_len_m)


@dataclass(frozen=True)
class EpisodeMetrics:
    ne_m: float
    sr: int
    osr: int
    spl: float
    rgs: int | None
    rgspl: float | None
    path_len_m: float
    shortest_len_m: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_KEYS}


def episode_metrics(scene, path, stop_node: int, goal: int, start: int, predicted_object=None, target_object=None) -> EpisodeMetrics:
    ne = navigation_error(scene, stop_node, goal)
    sr = success(ne)
    taken = path_length(scene, path)
    best = shortest_path(scene, start, goal)[1]
    r, rp = None, None
    if target_object is not None:
        r = rgs(sr, predicted_object, target_object)
        rp = rgspl(r, best, taken)
    return EpisodeMetrics(ne, sr, oracle_success(scene, path, goal), spl(sr, best, taken), r, rp, taken, best)


def result_metrics(scene, result, target_object=None) -> EpisodeMetrics:
    return episode_metrics(
        scene, result.path, result.stop_node, result.goal, result.start, result.predicted_object, target_object
    )


def aggregate(metrics) -> dict:
    """Means of each metric plus ``count``; RGS terms average over episodes that have them."""
    metrics = list(metrics)
    if not metrics:
        raise ContractError("cannot aggregate an empty episode list")
    out = {}
    for key in METRIC_KEYS:
        vals = [getattr(m, key) for m in metrics if getattr(m, key) is not None]
        # sorted so the float sum does not depend on episode order
        out[key] = math.fsum(sorted(vals)) / len(vals) if vals else None
    out["count"] = len(metrics)
    return out


def report(rows) -> dict:
    """``rows``: iterable of ``(scene_id, episode_id, EpisodeMetrics)``."""
    rows = list(rows)
    return {
        "episodes": [{"scene_id": s, "episode_id": e, **m.to_dict()} for s, e, m in rows],
        "summary": aggregate(m for _, _, m in rows),
    }


def validate_report(doc: dict) -> None:
    """Structural check of a metrics report; raises ``ContractError``."""
    problems = []
    if not isinstance(doc, dict) or set(doc) < {"episodes", "summary"}:
        raise ContractError("report must have 'episodes' and 'summary'")
    for i, row in enumerate(doc["episodes"]):
        missing = [k for k in ("scene_id", "episode_id", *METRIC_KEYS) if k not in row]
        if missing:
            problems.append(f"row {i}: missing {missing}")
            continue
        if row["sr"] not in (0, 1) or row["osr"] not in (0, 1) or row["rgs"] not in (0, 1, None):
            problems.append(f"row {i}: flags must be 0/1")
        for k in ("spl", "rgspl"):
            if row[k] is not None and not 0.0 <= row[k] <= 1.0:
                problems.append(f"row {i}: {k} out of [0,1]")
        if row["ne_m"] < 0 or row["path_len_m"] < 0 or row["shortest_len_m"] < 0:
            problems.append(f"row {i}: negative length")
    summary = doc["summary"]
    missing = [k for k in (*METRIC_KEYS, "count") if k not in summary]
    if missing:
        problems.append(f"summary missing {missing}")
    elif summary["count"] != len(doc["episodes"]):
        problems.append("summary count disagrees with rows")
    if problems:
        raise ContractError("; ".join(problems))
