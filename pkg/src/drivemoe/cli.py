"""Command-line entry point.

All outputs of one invocation live under a single run directory::

    <outdir>/config.json            resolved config of the latest invocation
    <outdir>/data/dataset.{bin,json}
    <outdir>/checkpoints/stage{1,2}.ckpt
    <outdir>/logs/stage{1,2}.jsonl
    <outdir>/reports/*.json|csv

Settings are layered: built-in defaults, then ``--config`` (JSON), then the
``DRIVEMOE_SEED`` / ``DRIVEMOE_OUTDIR`` environment variables, then flags.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .dataset import annotate_dataset, generate_dataset, label_histogram, load_dataset, save_dataset
from .evalsuite import (
    BENCHMARK_SCENARIOS,
    BenchmarkReport,
    ExpertPolicy,
    ModelPolicy,
    RouteOraclePolicy,
    ZeroPolicy,
    benchmark_routes,
    evaluate_open_loop,
    run_closed_loop,
)
from .model import ModelConfig
from .trainer import TrainConfig, load_policy, run_stage1, run_stage2
from .world.catalogue import SKILL_SCENARIOS, SKILLS, primary_skill

log = logging.getLogger("drivemoe")

EXIT_OK = 0
EXIT_FAILURE = 1  # unexpected runtime error
EXIT_USAGE = 2  # unknown subcommand or bad flags (argparse)
EXIT_CONFIG = 3  # malformed config file or values
EXIT_MISSING = 4  # required input file absent
EXIT_PRECONDITION = 5  # inputs present but unusable (unlabeled data, wrong checkpoint stage/version)

ENV_SEED = "DRIVEMOE_SEED"
ENV_OUTDIR = "DRIVEMOE_OUTDIR"

MODEL_PRESETS = {
    "default": {},
    "small": dict(d_model=32, n_heads=2, encoder_blocks=1, encoder_ff=64, decoder_blocks=2, d_ff=64,
                  router_hidden=32),
}

DEFAULTS = {
    "seed": 0,
    "outdir": "runs/default",
    "jobs": 1,
    "data": {"skill": "all", "seeds": 5, "catalogue": False, "stride": 2, "perturb": 0.3, "max_steps": None,
             "n_experts": 6},
    "model": {"preset": "small", "dense": False},
    "train": {"epochs": None, "batch_size": 64, "micro_batch": None, "max_steps": None, "learning_rate": 1e-3,
              "warmup_steps": 50, "max_grad_norm": 1.0, "lambda0": 0.05, "lambda1": 1.0, "lambda2": None,
              "lambda3": 0.01, "load_balance": True, "noise_std": 0.1, "val_fraction": 0.05, "log_every": 1},
    "eval": {"seeds": 5, "euler_steps": None, "jerk_limit": 4.0, "lat_limit": 4.0, "policy": "model"},
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# config -----------------------------------------------------------------------
OPEN_SECTIONS = ("model.",)  # free-form keys, validated by ModelConfig


def _merge(base: dict, over: dict, path: str = "") -> dict:
    if not isinstance(over, dict):
        raise CliError(EXIT_CONFIG, f"config section {path.rstrip('.')!r} must be an object")
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base and path in OPEN_SECTIONS:
            out[k] = v
            continue
        if k not in base:
            raise CliError(EXIT_CONFIG, f"unknown config key {path + k!r}")
        out[k] = _merge(base[k], v, f"{path}{k}.") if isinstance(base[k], dict) else v
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING, f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"malformed config {p}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliError(EXIT_CONFIG, f"config {p} must be a JSON object")
    return doc


def resolve_config(args: argparse.Namespace, env=None) -> dict:
    env = os.environ if env is None else env
    cfg = _merge(DEFAULTS, load_config(args.config))
    try:
        if env.get(ENV_SEED):
            cfg["seed"] = int(env[ENV_SEED])
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"{ENV_SEED} must be an integer") from exc
    if env.get(ENV_OUTDIR):
        cfg["outdir"] = env[ENV_OUTDIR]
    for key in ("seed", "outdir", "jobs"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    if not isinstance(cfg["seed"], int) or not isinstance(cfg["jobs"], int) or cfg["jobs"] < 1:
        raise CliError(EXIT_CONFIG, "seed must be an integer and jobs a positive integer")
    return cfg


def model_config(cfg: dict) -> ModelConfig:
    m = dict(cfg["model"])
    preset, dense = m.pop("preset", "small"), m.pop("dense", False)
    if preset not in MODEL_PRESETS:
        raise CliError(EXIT_CONFIG, f"unknown model preset {preset!r}")
    fields = {**MODEL_PRESETS[preset], **m}
    try:
        return ModelConfig.dense(**fields) if dense else ModelConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"bad model config: {exc}") from exc


def train_config(cfg: dict, stage: int) -> TrainConfig:
    try:
        return TrainConfig(stage=stage, seed=cfg["seed"], model=model_config(cfg), **cfg["train"])
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"bad train config: {exc}") from exc


class Run:
    """Paths inside one run directory plus the provenance stamped on artifacts."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.root = Path(cfg["outdir"])

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    @property
    def dataset(self) -> Path:
        return self.root / "data" / "dataset"

    def checkpoint(self, stage: int) -> Path:
        return self.root / "checkpoints" / f"stage{stage}.ckpt"

    @property
    def provenance(self) -> dict:
        return {"run_config": self.cfg, "seed": self.cfg["seed"]}

    def write_config(self) -> None:
        self.path("config.json").write_text(json.dumps(self.cfg, indent=2, sort_keys=True) + "\n")

    def write_json(self, name: str, doc: dict) -> Path:
        p = self.path("reports", name)
        p.write_text(json.dumps({**doc, **self.provenance}, indent=2, sort_keys=True, allow_nan=False) + "\n")
        return p


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CliError(EXIT_MISSING, f"{what} not found: {path}")
    return path


def _load_data(run: Run, labeled: bool = False):
    _require(run.dataset.with_suffix(".json"), "dataset (run gen-data first)")
    ds = load_dataset(run.dataset)
    if labeled and not ds.labeled:
        raise CliError(EXIT_PRECONDITION, "dataset is not annotated (run annotate first)")
    return ds


def _load_checkpoint(run: Run, explicit: str | None):
    path = Path(explicit) if explicit else next((run.checkpoint(s) for s in (2, 1) if run.checkpoint(s).exists()),
                                                run.checkpoint(2))
    _require(path, "checkpoint (run train first)")
    try:
        return load_policy(path)
    except CheckpointError as exc:
        raise CliError(EXIT_PRECONDITION, str(exc)) from exc


# subcommands ------------------------------------------------------------------
def data_jobs(skill: str, seeds: int, catalogue: bool, seed_base: int) -> list[tuple[str, int, int]]:
    """Scenario instances for one skill (or ``all``): benchmark variants, or every catalogued scenario."""
    names = {s.lower(): s for s in SKILLS}
    key = skill.lower().replace("_", "").replace("-", "")
    if key != "all" and key not in names:
        raise CliError(EXIT_CONFIG, f"unknown skill {skill!r}; choose from {', '.join(SKILLS)} or all")
    chosen = SKILLS if key == "all" else (names[key],)
    items = []
    for sk in chosen:
        if catalogue:
            items += [(sid, 0) for sid in SKILL_SCENARIOS[sk] if primary_skill(sid) == sk]
        else:
            items += list(BENCHMARK_SCENARIOS[sk])
    return [(sid, seed_base + k, var) for sid, var in items for k in range(seeds)]


def cmd_gen_data(args, run: Run) -> int:
    d = run.cfg["data"]
    jobs = data_jobs(d["skill"], int(d["seeds"]), bool(d["catalogue"]), run.cfg["seed"])
    log.info("rolling out %d episodes with %d worker(s)", len(jobs), run.cfg["jobs"])
    ds = generate_dataset(jobs, stride=d["stride"], perturb=d["perturb"], n_jobs=run.cfg["jobs"],
                          max_steps=d["max_steps"])
    save_dataset(ds, run.path("data", "dataset"), run.provenance)
    print(json.dumps({"episodes": len(ds.episodes), "frames": len(ds),
                      "failed": [e["scenario_id"] for e in ds.episodes if not e["success"]]}, sort_keys=True))
    return EXIT_OK


def cmd_annotate(args, run: Run) -> int:
    ds = _load_data(run)
    ds = annotate_dataset(ds, int(run.cfg["data"]["n_experts"]))
    # keep the generation provenance; record the annotating run beside it
    save_dataset(ds, run.dataset, {"annotation": run.provenance})
    print(json.dumps(label_histogram(ds), sort_keys=True))
    return EXIT_OK


def cmd_train(args, run: Run) -> int:
    stage = args.stage
    cfg = train_config(run.cfg, stage)
    ds = _load_data(run, labeled=cfg.model.is_moe)
    extra = run.provenance
    if stage == 1:
        tr = run_stage1(cfg, ds, run.path("checkpoints", "stage1.ckpt"), run.path("logs", "stage1.jsonl"), extra)
    else:
        ckpt = _require(run.checkpoint(1), "stage-1 checkpoint (run train --stage 1 first)")
        try:
            tr = run_stage2(cfg, ckpt, ds, run.path("checkpoints", "stage2.ckpt"), run.path("logs", "stage2.jsonl"),
                            extra)
        except CheckpointError as exc:
            raise CliError(EXIT_PRECONDITION, str(exc)) from exc
    last = next((h for h in reversed(tr.state.history) if h["kind"] == "train"), {})
    print(json.dumps({"stage": stage, "steps": tr.state.step, "total": last.get("total")}, sort_keys=True))
    return EXIT_OK


def cmd_eval_open(args, run: Run) -> int:
    policy, header = _load_checkpoint(run, args.checkpoint)
    ds = _load_data(run)
    idx = np.asarray(header.get("val_idx") or []) if not args.all_frames else None
    if idx is not None and idx.size == 0:
        idx = None
    out = evaluate_open_loop(policy, ds, idx, seed=run.cfg["seed"])
    path = run.write_json("open_loop.json", {"kind": "open_loop", "checkpoint_stage": header["stage"], **out})
    print(json.dumps(out, sort_keys=True))
    log.info("wrote %s", path)
    return EXIT_OK


def cmd_eval_closed(args, run: Run) -> int:
    e = run.cfg["eval"]
    kind = args.policy or e["policy"]
    if kind == "model":
        policy, header = _load_checkpoint(run, args.checkpoint)
        pol = ModelPolicy(policy, e["euler_steps"])
    else:
        pol = {"oracle": RouteOraclePolicy, "zero": ZeroPolicy, "expert": ExpertPolicy}[kind]()
    routes = benchmark_routes(int(e["seeds"]))
    report = run_closed_loop(pol, routes, seed=run.cfg["seed"], n_jobs=run.cfg["jobs"],
                             config={**run.cfg, "policy": kind}, jerk_limit=e["jerk_limit"],
                             lat_limit=e["lat_limit"])
    js, _ = report.save(run.path("reports", f"closed_loop_{kind}"))
    print(json.dumps(report.summary(), sort_keys=True))
    log.info("wrote %s", js)
    return EXIT_OK


def cmd_report(args, run: Run) -> int:
    reports = sorted(_require(run.root / "reports", "reports directory").glob("*.json"))
    rows = []
    for p in reports:
        if p.name.startswith("summary"):
            continue
        doc = json.loads(p.read_text())
        if doc.get("schema_version") is not None:
            rep = BenchmarkReport.load(p)
            rows.append({"source": p.name, "kind": "closed_loop", **rep.summary(),
                         **{f"{k}.driving_score": v["driving_score"] for k, v in rep.per_skill.items()},
                         **{f"{k}.success_rate": v["success_rate"] for k, v in rep.per_skill.items()}})
        elif doc.get("kind") == "open_loop":
            rows.append({"source": p.name, "kind": "open_loop",
                         **{k: doc.get(k) for k in ("open_loop_l2", "vision_acc", "action_acc", "n_frames")}})
    if not rows:
        raise CliError(EXIT_MISSING, f"no reports under {run.root / 'reports'}")
    run.write_json("summary.json", {"kind": "summary", "rows": rows})
    keys = sorted({k for r in rows for k in r})
    with open(run.path("reports", "summary.csv"), "w", newline="") as fh:
        fh.write(f"# seed={run.cfg['seed']} config={json.dumps(run.cfg, sort_keys=True)}\n")
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
    print(json.dumps({"rows": len(rows)}))
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "annotate": cmd_annotate, "train": cmd_train, "eval-open": cmd_eval_open,
            "eval-closed": cmd_eval_closed, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help=f"base seed (env {ENV_SEED})")
    common.add_argument("--outdir", help=f"run directory (env {ENV_OUTDIR})")
    common.add_argument("--jobs", type=int, help="worker processes for rollouts")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="drivemoe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-data", parents=[common], help="roll out expert demonstrations")
    g.add_argument("--skill", help="skill family or 'all'")
    g.add_argument("--seeds", type=int, help="seeds per scenario variant")
    g.add_argument("--catalogue", action="store_true", default=None, help="use every catalogued scenario")
    g.add_argument("--max-steps", type=int, help="truncate episodes (smoke runs)")
    sub.add_parser("annotate", parents=[common], help="label views and skills")
    t = sub.add_parser("train", parents=[common], help="train stage 1 or 2")
    t.add_argument("--stage", type=int, choices=(1, 2), required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--dense", action="store_true", default=None, help="dense single-expert baseline")
    o = sub.add_parser("eval-open", parents=[common], help="open-loop L2 and router accuracy")
    o.add_argument("--checkpoint")
    o.add_argument("--all-frames", action="store_true", help="score every frame, not only the validation split")
    c = sub.add_parser("eval-closed", parents=[common], help="closed-loop benchmark")
    c.add_argument("--checkpoint")
    c.add_argument("--policy", choices=("model", "oracle", "zero", "expert"))
    c.add_argument("--route-seeds", type=int, help="seeds per benchmark variant")
    sub.add_parser("report", parents=[common], help="merge reports into summary JSON/CSV")
    return p


def _apply_flags(cfg: dict, args) -> dict:
    cfg = copy.deepcopy(cfg)
    flag_map = {("data", "skill"): "skill", ("data", "seeds"): "seeds", ("data", "catalogue"): "catalogue",
                ("data", "max_steps"): "max_steps" if args.command == "gen-data" else None,
                ("train", "epochs"): "epochs", ("train", "max_steps"): "max_steps" if args.command == "train" else None,
                ("model", "dense"): "dense", ("eval", "seeds"): "route_seeds"}
    for (section, key), attr in flag_map.items():
        if attr and getattr(args, attr, None) is not None:
            cfg[section][key] = getattr(args, attr)
    return cfg


def main(argv=None, env=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_flags(resolve_config(args, env), args)
        run = Run(cfg)
        run.write_config()
        return COMMANDS[args.command](args, run)
    except CliError as exc:
        print(f"drivemoe {args.command}: error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - report and exit nonzero
        log.debug("unhandled error", exc_info=True)
        print(f"drivemoe {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
