"""Command line front end: scene generation, training, sweeps, gradient checks.

A run is driven by a JSON config with nested model / train / scene / sweep
sections plus flag overrides (``--set train.epochs=20``).  Every run
directory receives a run.json with the tool version, the fully resolved
config, and all scene seeds before any real work starts, so any artifact
can be regenerated from its directory alone.

Exit codes: 0 success, 1 internal or numeric failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__, experiments, gradcheck, scenegen, trainer
from .errors import (CheckpointError, ConfigError, DimensionError, InputError,
                     TrainingAbort)
from .models import ModelConfig, build_model
from .trainer import TrainConfig

TOP_KEYS = ("seed", "resume", "model", "train", "scene", "sweep")

SCENE_DEFAULTS = {
    "scenario": "dynamic",
    "k": 5,
    "count": 8,
    "order": "random",
    "duration_s": scenegen.DEFAULT_DURATION_S,
    "sample_rate": scenegen.DEFAULT_SR,
    "base_seed": None,      # falls back to the run seed
    "dir": None,            # load exported scenes instead of generating
    "val_count": 0,
    "val_base_seed": None,  # falls back to base_seed + 10000
}

SWEEP_DEFAULTS = {
    "scenario": "dynamic",
    "k_values": None,       # falls back to the scenario's default range
    "checkpoints": None,    # {model_tag: checkpoint path}
    "val_count": experiments.DEFAULT_VAL_COUNT,
    "val_base_seed": experiments.DEFAULT_VAL_BASE_SEED,
    "duration_s": scenegen.DEFAULT_DURATION_S,
    "sample_rate": scenegen.DEFAULT_SR,
}


# ---------------------------------------------------------------------------
# config plumbing

def load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        try:
            config = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: config root must be an object")
    return config


def apply_overrides(config: dict, assignments) -> dict:
    """--set key=value pairs; dotted keys walk sections, values parse as JSON."""
    for item in assignments:
        key, eq, raw = item.partition("=")
        if not eq or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings are handy for paths and tags
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key!r} crosses a non-section value")
        node[parts[-1]] = value
    return config


def _reject_unknown(given: dict, allowed, label: str) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config key {label}{unknown[0]!r}")


def _section(config: dict, name: str, defaults: dict) -> dict:
    given = config.get(name, {})
    if not isinstance(given, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    _reject_unknown(given, defaults, f"in {name} section: ")
    merged = dict(defaults)
    merged.update(given)
    return merged


def _model_config(config: dict) -> ModelConfig:
    given = config.get("model", {})
    if not isinstance(given, dict):
        raise ConfigError("config section 'model' must be an object")
    _reject_unknown(given, [f.name for f in fields(ModelConfig)], "model.")
    if "input_bins" not in given:
        raise ConfigError("model.input_bins is required")
    cfg = ModelConfig(**given)
    cfg.validate()
    return cfg


def _train_config(config: dict, run_seed: int) -> TrainConfig:
    given = dict(config.get("train", {}))
    if not isinstance(given, dict):
        raise ConfigError("config section 'train' must be an object")
    _reject_unknown(given, [f.name for f in fields(TrainConfig)], "train.")
    given.setdefault("seed", run_seed)
    cfg = TrainConfig(**given)
    cfg.validate()
    return cfg


def write_run_json(out_dir: Path, command: str, config: dict, seeds) -> None:
    doc = {"tool": "mvdenoise", "version": __version__, "command": command,
           "config": config, "seeds": seeds}
    with open(out_dir / "run.json", "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")


# ---------------------------------------------------------------------------
# scene sources

def _check_scene_section(sc: dict) -> None:
    if sc["scenario"] not in ("static", "dynamic"):
        raise ConfigError(f"scene.scenario must be static or dynamic, "
                          f"got {sc['scenario']!r}")
    if int(sc["k"]) < 1:
        raise ConfigError(f"scene.k must be >= 1, got {sc['k']}")
    if int(sc["count"]) < 1:
        raise ConfigError(f"scene.count must be >= 1, got {sc['count']}")


def _load_scene_dir(path) -> list:
    root = Path(path)
    if not root.is_dir():
        raise InputError(f"scene directory not found: {root}")
    subdirs = sorted(p for p in root.iterdir()
                     if (p / "meta.json").is_file())
    if not subdirs:
        raise InputError(f"no scenes under {root}")
    return [scenegen.import_scene(p) for p in subdirs]


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen(config: dict, out_dir: Path, force: bool, threads: int) -> int:
    sc = _section(config, "scene", SCENE_DEFAULTS)
    _check_scene_section(sc)
    base_seed = sc["base_seed"] if sc["base_seed"] is not None else config["seed"]
    seeds = [base_seed + i for i in range(sc["count"])]

    if out_dir.is_dir() and any(out_dir.iterdir()) and not force:
        raise InputError(f"output directory {out_dir} is not empty "
                         f"(pass --force to overwrite)")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_run_json(out_dir, "gen", config, seeds)

    scenes = experiments.scene_pool(sc["scenario"], sc["count"], sc["k"],
                                    base_seed, order=sc["order"],
                                    duration_s=sc["duration_s"],
                                    sample_rate=sc["sample_rate"],
                                    threads=threads)
    names = [f"scene{i:03d}" for i in range(len(scenes))]
    for name, scene in zip(names, scenes):
        scenegen.export_scene(scene, out_dir / name)
    manifest = {"scenario": sc["scenario"], "k": sc["k"], "order": sc["order"],
                "count": sc["count"], "duration_s": sc["duration_s"],
                "sample_rate": sc["sample_rate"], "seeds": seeds,
                "scene_dirs": names}
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    print(f"wrote {len(scenes)} scenes under {out_dir}")
    return 0


def cmd_train(config: dict, out_dir: Path, threads: int) -> int:
    sc = _section(config, "scene", SCENE_DEFAULTS)
    _check_scene_section(sc)
    train_cfg = _train_config(config, config["seed"])

    resume = config.get("resume")
    if resume:
        ckpt = trainer.load_checkpoint(resume)
        given = config.get("model", {})
        _reject_unknown(given, [f.name for f in fields(ModelConfig)], "model.")
        for key, want in given.items():
            have = getattr(ckpt.model_config, key)
            if have != want:
                raise ConfigError(f"checkpoint disagrees with config field "
                                  f"model.{key}: {have!r} != {want!r}")
        model = trainer.restore_model(ckpt)
        adam = trainer.restore_adam(ckpt, model)
        start_epoch = ckpt.epoch
        rng_state = ckpt.rng_state
    else:
        model = build_model(_model_config(config), seed=config["seed"])
        adam = None
        start_epoch = 0
        rng_state = None

    if sc["dir"] is not None:
        train_scenes = _load_scene_dir(sc["dir"])
        train_seeds = [s.meta.get("seed") for s in train_scenes]
        base_seed = sc["base_seed"] if sc["base_seed"] is not None else config["seed"]
    else:
        base_seed = sc["base_seed"] if sc["base_seed"] is not None else config["seed"]
        train_seeds = [base_seed + i for i in range(sc["count"])]
        train_scenes = experiments.scene_pool(
            sc["scenario"], sc["count"], sc["k"], base_seed, order=sc["order"],
            duration_s=sc["duration_s"], sample_rate=sc["sample_rate"],
            threads=threads)
    val_base = (sc["val_base_seed"] if sc["val_base_seed"] is not None
                else base_seed + 10000)
    val_seeds = [val_base + i for i in range(sc["val_count"])]
    val_scenes = experiments.scene_pool(
        sc["scenario"], sc["val_count"], sc["k"], val_base, order=sc["order"],
        duration_s=sc["duration_s"], sample_rate=sc["sample_rate"],
        threads=threads) if sc["val_count"] else []

    out_dir.mkdir(parents=True, exist_ok=True)
    write_run_json(out_dir, "train", config,
                   {"train": train_seeds, "val": val_seeds})
    result = trainer.train(model, train_cfg, train_scenes, val_scenes,
                           checkpoint_path=out_dir / "checkpoint.mvnc",
                           history_path=out_dir / "history.csv",
                           log=print, adam=adam, start_epoch=start_epoch,
                           rng_state=rng_state)
    print(f"best epoch {result.best_epoch}, checkpoint and history "
          f"under {out_dir}")
    return 0


def cmd_sweep(config: dict, out_dir: Path, threads: int) -> int:
    sw = _section(config, "sweep", SWEEP_DEFAULTS)
    if sw["scenario"] not in ("static", "dynamic"):
        raise ConfigError(f"sweep.scenario must be static or dynamic, "
                          f"got {sw['scenario']!r}")
    if not sw["checkpoints"]:
        raise ConfigError("sweep.checkpoints must map model tags to paths")
    k_values = sw["k_values"]
    if k_values is None:
        k_values = (experiments.DEFAULT_STATIC_KS if sw["scenario"] == "static"
                    else experiments.DEFAULT_DYNAMIC_KS)
    seeds = [sw["val_base_seed"] + i for i in range(sw["val_count"])]

    models_by_tag = []
    for tag in sorted(sw["checkpoints"]):
        ckpt = trainer.load_checkpoint(sw["checkpoints"][tag])
        given = config.get("model", {})
        _reject_unknown(given, [f.name for f in fields(ModelConfig)], "model.")
        for key, want in given.items():
            have = getattr(ckpt.model_config, key)
            if have != want:
                raise ConfigError(f"checkpoint {tag!r} disagrees with config "
                                  f"field model.{key}: {have!r} != {want!r}")
        models_by_tag.append((tag, trainer.restore_model(ckpt)))

    out_dir.mkdir(parents=True, exist_ok=True)
    write_run_json(out_dir, "sweep", config, seeds)
    if sw["scenario"] == "static":
        rows = []
        for tag, model in models_by_tag:
            rows.extend(experiments.static_sweep(
                model, tag, k_values=k_values, seeds=seeds,
                duration_s=sw["duration_s"], sample_rate=sw["sample_rate"],
                threads=threads))
    else:
        rows = experiments.dynamic_sweep(
            models_by_tag, k_values=k_values, seeds=seeds,
            duration_s=sw["duration_s"], sample_rate=sw["sample_rate"],
            threads=threads)
    experiments.emit_csv(rows, out_dir / "results.csv")
    print(f"wrote {len(rows)} rows to {out_dir / 'results.csv'}")
    return 0


def cmd_gradcheck(seed: int) -> int:
    rows, ok = gradcheck.run_registry(seed=seed)
    width = max(len(name) for name, _, _, _ in rows)
    print(f"{'op':<{width}}  {'max rel err':>12}  {'seconds':>8}  status")
    for name, err, elapsed, passed in rows:
        status = "PASS" if passed else "FAIL"
        print(f"{name:<{width}}  {err:12.3e}  {elapsed:8.2f}  {status}")
    n_pass = sum(1 for _, _, _, passed in rows if passed)
    print(f"{n_pass}/{len(rows)} ops passed")
    if not ok:
        bad = [name for name, _, _, passed in rows if not passed]
        print(f"gradient check failed for: {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvdenoise",
        description="Channel-unrolled recurrent denoisers: scene generation, "
                    "training, evaluation sweeps, gradient checks.")
    parser.add_argument("--version", action="version",
                        version=f"mvdenoise {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = (("gen", "synthesize a directory of seeded scenes", True),
                ("train", "train a model on synthetic or exported scenes", True),
                ("sweep", "evaluate checkpoints across channel counts", True),
                ("gradcheck", "finite-difference check of every op", False))
    for name, help_text, needs_out in commands:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None,
                       help="JSON run config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the run seed")
        p.add_argument("--threads", type=int, default=1,
                       help="scene-level parallelism for gen/eval")
        p.add_argument("--set", dest="overrides", action="append",
                       metavar="KEY=VALUE", default=[],
                       help="override a config entry (dotted path, JSON value)")
        if needs_out:
            p.add_argument("--out", type=Path, required=True,
                           help="run output directory")
            p.add_argument("--force", action="store_true",
                           help="allow writing into a non-empty directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        apply_overrides(config, args.overrides)
        if args.seed is not None:
            config["seed"] = args.seed
        config.setdefault("seed", 0)
        _reject_unknown(config, TOP_KEYS, "")
        if args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")
        if args.command == "gen":
            return cmd_gen(config, args.out, args.force, args.threads)
        if args.command == "train":
            return cmd_train(config, args.out, args.threads)
        if args.command == "sweep":
            return cmd_sweep(config, args.out, args.threads)
        return cmd_gradcheck(config["seed"])
    except (ConfigError, InputError, CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (TrainingAbort, DimensionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
