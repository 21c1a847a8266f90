"""Command-line entry point: ``lgk <subcommand> ...``.

Exit codes: 0 success, 2 usage or config error, 3 data validation error,
4 numerical failure during training or evaluation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from lgk.agent import Agent, dumps_json, evaluate, evaluate_parallel, teacher_for
from lgk.env import generate_scene, load_scene, replay, save_scene
from lgk.errors import ConfigError, LGKError, NumericalError, ValidationError
from lgk.knowledge_base import NounLexicon, build_kb, load_kb, load_records, save_kb
from lgk.matching import KnowledgeMatcher, load_provider, match_dump
from lgk.metrics import episode_metrics, report, validate_report
from lgk.model.config import ModelConfig
from lgk.training import TrainConfig, fresh_model, load_model, train

log = logging.getLogger("lgk")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# frozen-gate variant appended to the KGL x KGDA grid
ABLATION_CELLS = (
    ("kgl+kgda", {"use_kgl": True, "use_kgda": True, "use_kgda_gate": True}),
    ("kgl", {"use_kgl": True, "use_kgda": False, "use_kgda_gate": True}),
    ("kgda", {"use_kgl": False, "use_kgda": True, "use_kgda_gate": True}),
    ("none", {"use_kgl": False, "use_kgda": False, "use_kgda_gate": True}),
    ("kgl+kgda-frozen", {"use_kgl": True, "use_kgda": True, "use_kgda_gate": False}),
)


@dataclass
class RunConfig:
    """Everything a train/eval/ablate run needs; loaded from one flat JSON file."""

    seed: int | None = None
    model_config: str | None = None
    model: dict = field(default_factory=dict)
    scenes: list = field(default_factory=list)
    kb: str | None = None
    embeddings: str | None = None
    hash_seed: int | None = None
    use_knowledge: bool | None = None
    use_kgl: bool | None = None
    use_kgda: bool | None = None
    use_kgda_gate: bool | None = None
    epochs: int = 10
    lr: float = 1e-2
    batch: int = 1
    sampling_ratio: float = 0.25
    out: str | None = None

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"run config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"run config {path}: expected a JSON object")
        unknown = sorted(set(doc) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"run config {path}: unknown keys {unknown}")
        base = Path(path).parent
        # relative paths in a config file resolve against the file's directory
        for key in ("model_config", "kb", "embeddings"):
            if isinstance(doc.get(key), str):
                doc[key] = str(base / doc[key])
        if "scenes" in doc:
            doc["scenes"] = [str(base / s) for s in doc["scenes"]]
        return cls(**doc)

    def merged(self, overrides: dict) -> "RunConfig":
        return RunConfig(**{**asdict(self), **{k: v for k, v in overrides.items() if v is not None}})

    def validate(self, need_kb: bool = True, need_seed: bool = True) -> None:
        if need_seed and self.seed is None:
            raise ConfigError("a seed is required (--seed or 'seed' in the config file)")
        if not self.scenes:
            raise ConfigError("no scenes given")
        paths = list(self.scenes)
        if self.model_config:
            paths.append(self.model_config)
        if need_kb and self.use_knowledge is not False:
            if not self.kb:
                raise ConfigError("a knowledge base is required unless use_knowledge is false")
            paths.append(self.kb)
        if self.embeddings:
            paths.append(self.embeddings)
        missing = [p for p in paths if not Path(p).is_file()]
        if missing:
            raise ConfigError(f"missing files: {missing}")

    def model_cfg(self) -> ModelConfig:
        doc = ModelConfig.from_file(self.model_config).to_dict() if self.model_config else {}
        doc.update(self.model)
        for t in ("use_knowledge", "use_kgl", "use_kgda", "use_kgda_gate"):
            if getattr(self, t) is not None:
                doc[t] = getattr(self, t)
        doc["seed"] = self.seed
        return ModelConfig.from_dict(doc)

    def train_cfg(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr, batch=self.batch, sampling_ratio=self.sampling_ratio, seed=self.seed)


# ---------------------------------------------------------------- helpers


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _write(path, text: str) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8", newline="\n")


def _emit(doc, out) -> None:
    text = dumps_json(doc)
    if out:
        _write(out, text)
    else:
        sys.stdout.write(text)


def _run_config(args) -> RunConfig:
    base = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {
        "seed": args.seed,
        "model_config": args.model_config,
        "scenes": args.scenes or None,
        "kb": args.kb,
        "embeddings": args.embeddings,
        "hash_seed": args.hash_seed,
        "use_knowledge": args.use_knowledge,
        "use_kgl": args.use_kgl,
        "use_kgda": args.use_kgda,
        "use_kgda_gate": args.use_kgda_gate,
        "out": args.out,
    }
    for name in ("epochs", "lr", "batch", "sampling_ratio"):
        overrides[name] = getattr(args, name, None)
    return base.merged(overrides)


def _agent(rc: RunConfig, model) -> Agent:
    provider = load_provider(rc.embeddings, rc.hash_seed, model.config.d_embed)
    matcher = None
    if model.config.use_knowledge:
        kb = load_kb(rc.kb)
        matcher = KnowledgeMatcher(kb, provider, k=model.config.k, q_cap=model.config.q_cap)
    return Agent(model, provider, matcher)


def _scenes(rc: RunConfig) -> list:
    return [load_scene(p) for p in rc.scenes]


def _out_dir(rc: RunConfig) -> Path:
    if not rc.out:
        raise ConfigError("an output directory is required (--out)")
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dumps_jsonl(dumps) -> str:
    return "".join(json.dumps(d, sort_keys=False) + "\n" for d in dumps)


# ---------------------------------------------------------------- subcommands


def cmd_gen_scene(args) -> int:
    for i in range(args.count):
        seed = args.seed + i
        scene = generate_scene(seed, n_nodes=args.nodes, avg_degree=args.degree, n_objects=args.objects, n_episodes=args.episodes)
        out = Path(args.out)
        path = out / f"{scene.scene_id}.json" if args.count > 1 or out.suffix != ".json" else out
        path.parent.mkdir(parents=True, exist_ok=True)
        save_scene(scene, path)
        # reload so the written file goes through full validation
        load_scene(path)
        log.info("wrote %s", path)
    return EXIT_OK


def cmd_build_kb(args) -> int:
    if args.lexicon and not Path(args.lexicon).is_file():
        raise ConfigError(f"lexicon {args.lexicon} not found")
    if not Path(args.records).is_file():
        raise ConfigError(f"records file {args.records} not found")
    lexicon = NounLexicon.from_file(args.lexicon) if args.lexicon else NounLexicon.default()
    records = load_records(args.records)
    if not records:
        raise ConfigError(f"no records in {args.records}")
    kb = build_kb(records, lexicon)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_kb(kb, args.out)
    log.info("wrote %d entries to %s", len(kb), args.out)
    return EXIT_OK


def cmd_match(args) -> int:
    for p in (args.scene, args.kb, args.embeddings):
        if p and not Path(p).is_file():
            raise ConfigError(f"missing file {p}")
    if args.k < 1:
        raise ConfigError("--k must be >= 1")
    scene = load_scene(args.scene)
    if args.node not in scene.positions:
        raise ConfigError(f"node {args.node} is not in scene {scene.scene_id}")
    provider = load_provider(args.embeddings, args.hash_seed, args.dim)
    matcher = KnowledgeMatcher(load_kb(args.kb), provider, k=args.k, q_cap=args.q_cap)
    _emit(match_dump(scene, args.node, matcher, args.views), args.out)
    return EXIT_OK


def cmd_make_fixture(args) -> int:
    from lgk.fixtures import build_twin_fixture

    out = Path(args.out)
    fx = build_twin_fixture(seed=args.seed, dim=args.dim)
    paths = fx.write(out)
    run = {
        "seed": 0,
        "model": {"d_embed": args.dim},
        "scenes": [str(Path(p).relative_to(out)) for p in paths["scenes"]],
        "kb": "kb.jsonl",
        "embeddings": "embeddings.jsonl",
        "epochs": 50,
        "lr": 1e-2,
    }
    _write(out / "run.json", dumps_json(run))
    return EXIT_OK


def cmd_train(args) -> int:
    rc = _run_config(args)
    rc.validate()
    out = _out_dir(rc)
    cfg = rc.model_cfg()
    model = fresh_model(cfg)
    agent = _agent(rc, model)
    history = train(model, agent, _scenes(rc), rc.train_cfg(), out_dir=out)
    _write(out / "run_config.json", dumps_json({**asdict(rc), "out": None}))
    last = history[-1] if history else {}
    sys.stdout.write(dumps_json({"epochs": len(history), "final": last, "config_hash": cfg.config_hash()}))
    return EXIT_OK


def cmd_eval(args) -> int:
    rc = _run_config(args)
    if args.policy == "teacher":
        rc.validate(need_kb=False, need_seed=False)
        policy_for = teacher_for
    else:
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required unless --policy teacher")
        if not Path(args.checkpoint).is_file():
            raise ConfigError(f"checkpoint {args.checkpoint} not found")
        model = load_model(args.checkpoint)
        if rc.use_knowledge is None:
            rc = rc.merged({"use_knowledge": model.config.use_knowledge})
        elif rc.use_knowledge != model.config.use_knowledge:
            raise ConfigError("use_knowledge disagrees with the checkpoint's config")
        rc.validate(need_seed=False)
        policy_for = _agent(rc, model).policy
    scenes = _scenes(rc)
    run = evaluate if args.workers <= 1 else lambda s, p: evaluate_parallel(s, p, workers=args.workers)
    rep, dumps = run(scenes, policy_for)
    validate_report(rep)
    if rc.out:
        out = _out_dir(rc)
        _write(out / "report.json", dumps_json(rep))
        _write(out / "trajectories.jsonl", _dumps_jsonl(dumps))
    sys.stdout.write(dumps_json(rep["summary"]))
    return EXIT_OK


def cmd_replay(args) -> int:
    scenes = {}
    for p in args.scenes:
        s = load_scene(p)
        scenes[s.scene_id] = s
    if not Path(args.dumps).is_file():
        raise ConfigError(f"dump file {args.dumps} not found")
    rows = []
    with open(args.dumps, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            dump = json.loads(line)
            scene = scenes.get(dump["scene_id"])
            if scene is None:
                raise ValidationError(f"line {lineno}: unknown scene {dump['scene_id']!r}")
            ep = next((e for e in scene.episodes if e.episode_id == dump["episode_id"]), None)
            if ep is None:
                raise ValidationError(f"line {lineno}: unknown episode {dump['episode_id']!r}")
            path = replay(scene, dump)
            if path != dump["path"]:
                raise ValidationError(f"line {lineno}: replayed path {path} differs from recorded {dump['path']}")
            m = episode_metrics(scene, path, path[-1], ep.goal, ep.start, dump["predicted_object"], ep.target_object)
            rows.append((scene.scene_id, ep.episode_id, m))
    rep = report(rows)
    if args.report:
        want = json.loads(Path(args.report).read_text(encoding="utf-8"))
        if want != json.loads(json.dumps(rep)):
            raise ValidationError(f"replayed metrics differ from {args.report}")
    _emit(rep, args.out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    rc = _run_config(args)
    rc = rc.merged({"use_knowledge": True})
    rc.validate()
    out = _out_dir(rc)
    scenes = _scenes(rc)
    cells = []
    for name, toggles in ABLATION_CELLS:
        cell_rc = rc.merged(toggles)
        cfg = cell_rc.model_cfg()
        model = fresh_model(cfg)
        agent = _agent(cell_rc, model)
        history = train(model, agent, scenes, cell_rc.train_cfg(), out_dir=out / name)
        rep, dumps = evaluate(scenes, agent.policy)
        validate_report(rep)
        _write(out / name / "report.json", dumps_json(rep))
        _write(out / name / "trajectories.jsonl", _dumps_jsonl(dumps))
        cells.append(
            {
                "cell": name,
                "toggles": cfg.toggles(),
                "config_hash": cfg.config_hash(),
                "structure_hash": cfg.structure_hash(),
                "final_loss": history[-1]["loss"] if history else None,
                "summary": rep["summary"],
            }
        )
        log.info("cell %s SR %.3f", name, rep["summary"]["sr"])
    doc = {"seed": rc.seed, "epochs": rc.epochs, "cells": cells}
    _write(out / "ablation.json", dumps_json(doc))
    sys.stdout.write(dumps_json({c["cell"]: c["summary"]["sr"] for c in cells}))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _run_flags(p: argparse.ArgumentParser, training: bool) -> None:
    p.add_argument("--config", help="flat JSON run config; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--model-config", dest="model_config")
    p.add_argument("--scenes", nargs="+")
    p.add_argument("--kb")
    p.add_argument("--embeddings")
    p.add_argument("--hash-seed", dest="hash_seed", type=int, help="hash fallback for keys missing from --embeddings")
    for t in ("use-knowledge", "use-kgl", "use-kgda", "use-kgda-gate"):
        p.add_argument(f"--{t}", dest=t.replace("-", "_"), type=_bool, metavar="BOOL")
    p.add_argument("--out")
    if training:
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch", type=int)
        p.add_argument("--sampling-ratio", dest="sampling_ratio", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lgk", description="Knowledge-guided graph navigation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="generate random scenes")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--nodes", type=int, default=10)
    p.add_argument("--degree", type=float, default=3.0)
    p.add_argument("--objects", type=int, default=10)
    p.add_argument("--episodes", type=int, default=4)
    p.add_argument("--count", type=int, default=1, help="write COUNT scenes with consecutive seeds")
    p.add_argument("--out", required=True, help="a .json file, or a directory when --count > 1")
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("build-kb", help="canonicalize raw records into a knowledge base")
    p.add_argument("--records", required=True)
    p.add_argument("--lexicon", help="noun lexicon JSON (bundled default when omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_kb)

    p = sub.add_parser("match", help="dump knowledge matches for one node")
    p.add_argument("--scene", required=True)
    p.add_argument("--node", type=int, required=True)
    p.add_argument("--kb", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--hash-seed", dest="hash_seed", type=int)
    p.add_argument("--dim", type=int, default=32, help="hash embedding width")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--q-cap", dest="q_cap", type=int, default=25)
    p.add_argument("--views", type=int, nargs="+", help="view indices (default: candidate views)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("make-fixture", help="write the twin-scene training fixture")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_fixture)

    p = sub.add_parser("train", help="behaviour-clone the shortest-path teacher")
    _run_flags(p, training=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or the teacher")
    _run_flags(p, training=False)
    p.add_argument("--checkpoint")
    p.add_argument("--policy", choices=("model", "teacher"), default="model")
    p.add_argument("--workers", type=int, default=1, help="evaluate episodes in parallel threads")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate every toggle cell")
    _run_flags(p, training=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("replay", help="re-execute trajectory dumps and recompute metrics")
    p.add_argument("--scenes", nargs="+", required=True)
    p.add_argument("--dumps", required=True)
    p.add_argument("--report", help="fail unless the recomputed report equals this one")
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("LGK_LOG", "error").strip().lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        level = "error"
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"lgk {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"lgk {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LGKError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"lgk {args.command}: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
