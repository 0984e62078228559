"""Command-line entry point: ``lstail <command> [options]``.

Commands
--------
gen        write a synthetic long-tailed dataset
partition  split a dataset's classes into the bootstrap group and phases
plan       emit the training plan (new images + replay entries) of one phase
train      run the full phase loop; writes checkpoints, plans and reports
eval       re-score a checkpoint on a test set
report     re-render CSV/TSV tables from a run directory

Every command accepts ``--seed``, ``--out-dir`` and ``--config`` and writes
``<command>.manifest.json`` (resolved config, versions, seed) next to its
outputs. Keys present in a ``--config`` file win over command-line flags.
Without ``--config``, ``train`` starts from the shipped reference benchmark.

Exit status: 0 on success, 2 on usage errors (bad flag values, out-of-range
phase or ``b``), 1 on missing files and malformed inputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import checkpoint
from .config import ExperimentConfig, experiment_config, read_json, reference_dict
from .dataset import DatasetIndex, InstanceAnnotation, SynthConfig, build_index, generate_synthetic, load_any, synthetic_test_set, to_json
from .errors import ConfigError, LstError, RangeError
from .metrics import buckets_tsv, emit_report, evaluate, load_report, phases_csv
from .partition import assign_subsets, make_groups, sort_classes
from .replay import STRATEGIES, canonical_strategy, make_plan
from .trainer import run_experiment

log = logging.getLogger("lstail")

USAGE_ERRORS = (ConfigError, RangeError)
STRATEGY_CHOICES = STRATEGIES + ("balanced", "full", "one_instance")

# config-file key -> argparse dest, per command
GEN_KEYS = {
    "num_classes": "classes",
    "zipf_exponent": "zipf",
    "max_instances": "max_instances",
    "feature_dim": "dim",
    "noise_sigma": "noise",
    "cooccur_head_prob": "cooccur",
    "seed": "seed",
}
PLAN_KEYS = {"b": "b", "phase_size": "phase_size", "replay_strategy": "strategy", "seed": "seed", "one_instance_target": "target"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument types


def _number(kind, lo=None, hi=None, lo_open=False):
    def parse(text: str):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {kind.__name__}, got {text!r}") from None
        if not np.isfinite(v):
            raise argparse.ArgumentTypeError(f"{text!r} is not finite")
        if lo is not None and (v <= lo if lo_open else v < lo):
            raise argparse.ArgumentTypeError(f"must be {'>' if lo_open else '>='} {lo}, got {v}")
        if hi is not None and v > hi:
            raise argparse.ArgumentTypeError(f"must be <= {hi}, got {v}")
        return v

    return parse


_seed = _number(int, 0, 2**64 - 1)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=0, help="RNG seed (default 0)")
    common.add_argument("--out-dir", type=Path, default=Path("."), help="output directory (default: current)")
    common.add_argument("--config", type=Path, help="JSON config; its keys override flags")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")

    p = argparse.ArgumentParser(prog="lstail", description="Long-tailed class-incremental learning toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    g = sub.add_parser("gen", parents=[common], help="write a synthetic dataset")
    g.add_argument("--classes", type=_number(int, 2), default=60, help="number of classes (>= 2)")
    g.add_argument("--zipf", type=_number(float, 0, lo_open=True), default=1.0, help="Zipf exponent")
    g.add_argument("--max-instances", type=_number(int, 1), default=200, help="head-class instance count")
    g.add_argument("--dim", type=_number(int, 1), default=16, help="feature dimension")
    g.add_argument("--noise", type=_number(float, 0), default=0.3, help="feature noise std")
    g.add_argument("--cooccur", type=_number(float, 0, 1), default=0.3, help="head co-occurrence probability")
    g.add_argument("--out", type=Path, help="dataset file (default OUT_DIR/dataset.json)")
    g.set_defaults(func=cmd_gen)

    def grouping(sp):
        sp.add_argument("--dataset", type=Path, required=True, help="COCO/LVIS annotation file or lstail dataset")
        sp.add_argument("--b", type=_number(int, 1), default=20, help="bootstrap class count")
        sp.add_argument("--phase-size", type=_number(int, 1), default=10, help="classes per incremental phase")

    pa = sub.add_parser("partition", parents=[common], help="class groups and image subsets")
    grouping(pa)
    pa.add_argument("--out", type=Path, help="output file (default OUT_DIR/partition.json)")
    pa.set_defaults(func=cmd_partition)

    pl = sub.add_parser("plan", parents=[common], help="training plan of one phase")
    grouping(pl)
    pl.add_argument("--phase", type=_number(int, 0), required=True, help="phase t (0 = bootstrap)")
    pl.add_argument("--strategy", choices=STRATEGY_CHOICES, default="balanced_replay", help="replay strategy")
    pl.add_argument("--target", type=_number(int, 1), help="instances per old class for one_instance_per_image")
    pl.add_argument("--out", type=Path, help="output file (default OUT_DIR/plan_phase<t>.json)")
    pl.set_defaults(func=cmd_plan)

    tr = sub.add_parser("train", parents=[common], help="run a full experiment")
    tr.add_argument("--dataset", type=Path, help="training dataset with features (default: the config's synthetic set)")
    tr.add_argument("--test", type=Path, help="test dataset with features (required with --dataset)")
    tr.add_argument("--strategy", choices=STRATEGY_CHOICES, help="replay strategy")
    tr.add_argument("--mwg", action=argparse.BooleanOptionalAction, default=None, help="meta weight generator")
    tr.add_argument("--distill", action=argparse.BooleanOptionalAction, default=None, help="logit distillation")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", parents=[common], help="score a checkpoint")
    src = ev.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", type=Path, help="checkpoint file")
    src.add_argument("--phase", type=_number(int, 0), help="use OUT_DIR/checkpoints/phase_<t>.json")
    ev.add_argument("--test", type=Path, help="test dataset (default OUT_DIR/test.json)")
    ev.add_argument("--dataset", type=Path, help="training dataset for bucket counts (default OUT_DIR/dataset.json)")
    ev.add_argument("--out", type=Path, help="output file (default OUT_DIR/eval_phase<t>.json)")
    ev.set_defaults(func=cmd_eval)

    rp = sub.add_parser("report", parents=[common], help="render tables from a run directory")
    rp.set_defaults(func=cmd_report)
    return p


# ---------------------------------------------------------------------------
# helpers


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)
    return path


def _read(path: Path, what: str) -> str:
    if not path.is_file():
        raise FileNotFoundError(f"{what} {path} does not exist")
    return path.read_text()


def _load_dataset(path: Path) -> DatasetIndex:
    return load_any(_read(path, "dataset file"))


def _apply_config(args: argparse.Namespace, keys: dict[str, str], cfg: dict) -> None:
    for key, dest in keys.items():
        if key in cfg:
            setattr(args, dest, cfg[key])


def _versions() -> dict:
    return {"lstail": __version__, "numpy": np.__version__, "python": platform.python_version()}


def _args_record(args: argparse.Namespace) -> dict:
    skip = {"func", "quiet", "config"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in skip}


def _manifest(args: argparse.Namespace, config: dict, outputs: Sequence[Path]) -> Path:
    out_dir = args.out_dir
    doc = {
        "command": args.command,
        "args": _args_record(args),
        "config_file": None if args.config is None else str(args.config),
        "config": config,
        "seed": args.seed,
        "versions": _versions(),
        "outputs": sorted(str(p) for p in outputs),
    }
    return _write(out_dir / f"{args.command}.manifest.json", _dump(doc))


def _features_index(X: np.ndarray, y: np.ndarray) -> DatasetIndex:
    """Test samples as a dataset: one image per sample."""
    anns = [InstanceAnnotation(i, i, int(c), X[i]) for i, c in enumerate(y)]
    return build_index(anns, list(range(len(y))))


def _xy(index: DatasetIndex, what: str) -> tuple[np.ndarray, np.ndarray]:
    if index.features is None:
        raise ConfigError(f"{what} has no features")
    return index.features, np.asarray(index.class_ids)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args: argparse.Namespace) -> list[Path]:
    cfg = read_json(args.config).get("synth", {}) if args.config else {}
    _apply_config(args, GEN_KEYS, cfg)
    synth = SynthConfig(
        num_classes=args.classes,
        zipf_exponent=args.zipf,
        max_instances=args.max_instances,
        feature_dim=args.dim,
        noise_sigma=args.noise,
        cooccur_head_prob=args.cooccur,
        seed=args.seed,
        **{k: v for k, v in cfg.items() if k not in GEN_KEYS},
    )
    index = generate_synthetic(synth)
    out = _write(args.out or args.out_dir / "dataset.json", to_json(index) + "\n")
    log.info("%d classes, %d images, %d instances", len(index.classes), len(index.images), len(index))
    return [out, _manifest(args, {"synth": asdict(synth)}, [out])]


def _groups(args: argparse.Namespace, index: DatasetIndex):
    n = len(index.classes)
    if args.b > n:
        raise UsageError(f"--b {args.b} exceeds the dataset's {n} classes")
    return make_groups(sort_classes(index), args.b, args.phase_size)


def cmd_partition(args: argparse.Namespace) -> list[Path]:
    cfg = read_json(args.config) if args.config else {}
    _apply_config(args, {"b": "b", "phase_size": "phase_size"}, cfg)
    index = _load_dataset(args.dataset)
    groups = _groups(args, index)
    doc = {
        **groups.to_dict(),
        "T": groups.T,
        **assign_subsets(index, groups).to_dict(),
        "class_count": {str(c): index.class_count[c] for c in index.classes},
    }
    out = _write(args.out or args.out_dir / "partition.json", _dump(doc))
    return [out, _manifest(args, {"b": args.b, "phase_size": args.phase_size}, [out])]


def cmd_plan(args: argparse.Namespace) -> list[Path]:
    cfg = read_json(args.config) if args.config else {}
    _apply_config(args, PLAN_KEYS, cfg)
    args.strategy = canonical_strategy(args.strategy)
    index = _load_dataset(args.dataset)
    groups = _groups(args, index)
    if not 0 <= args.phase <= groups.T:
        raise UsageError(f"--phase {args.phase} outside [0, {groups.T}] for this partition")
    plan = make_plan(index, groups, args.phase, args.strategy, seed=args.seed, target_per_class=args.target)
    out = _write(args.out or args.out_dir / f"plan_phase{args.phase}.json", plan.to_json() + "\n")
    log.info("phase %d: %d new images, %d replay entries", plan.phase, len(plan.new_images), len(plan.replay_entries))
    config = {"b": args.b, "phase_size": args.phase_size, "strategy": args.strategy, "target": args.target}
    return [out, _manifest(args, config, [out])]


def _train_config(args: argparse.Namespace) -> ExperimentConfig:
    flags: dict[str, Any] = {"seed": args.seed}
    if args.strategy is not None:
        flags["replay_strategy"] = args.strategy
    if args.mwg is not None:
        flags["use_mwg"] = args.mwg
    if args.distill is not None:
        flags["use_distill"] = args.distill
    if args.config is None:
        return experiment_config(reference_dict(), **flags)
    cfg = read_json(args.config)
    return experiment_config({**flags, **cfg})


def cmd_train(args: argparse.Namespace) -> list[Path]:
    exp = _train_config(args)
    args.seed = exp.train.seed
    out_dir = args.out_dir
    if args.dataset is not None:
        if args.test is None:
            raise UsageError("--dataset needs --test")
        index = _load_dataset(args.dataset)
        test = _xy(_load_dataset(args.test), "test set")
    else:
        if exp.synth is None:
            raise UsageError("config has no 'synth' section; pass --dataset and --test")
        index = generate_synthetic(exp.synth)
        test = synthetic_test_set(exp.synth, exp.test_per_class)
    outputs = [
        _write(out_dir / "dataset.json", to_json(index) + "\n"),
        _write(out_dir / "test.json", to_json(_features_index(*test)) + "\n"),
    ]
    run = run_experiment(index, exp.train, test)
    for t, (state, plan) in enumerate(zip(run.states, run.plans)):
        p = out_dir / "checkpoints" / f"phase_{t}.json"
        p.parent.mkdir(parents=True, exist_ok=True)
        outputs.append(checkpoint.save(p, state, run.mwg_states[t]))
        outputs.append(_write(out_dir / "plans" / f"phase_{t}.json", plan.to_json() + "\n"))
    outputs += emit_report(run, out_dir)
    final = run.reports[-1]
    log.info("final phase %d: overall %.3f old %.3f new %.3f", final.phase, final.overall, final.old or 0.0, final.new or 0.0)
    return outputs + [_manifest(args, exp.to_dict(), outputs)]


def cmd_eval(args: argparse.Namespace) -> list[Path]:
    out_dir = args.out_dir
    ckpt = args.checkpoint or out_dir / "checkpoints" / f"phase_{args.phase}.json"
    state, _ = checkpoint.load(ckpt)
    test_index = _load_dataset(args.test or out_dir / "test.json")
    train_index = _load_dataset(args.dataset or out_dir / "dataset.json")
    X, y = _xy(test_index, "test set")
    keep = np.isin(y, np.asarray(state.class_ids))
    clf = state.classifier
    report = evaluate(state, X[keep], y[keep], train_index.class_count, clf.class_ids[clf.n_old :])
    out = _write(args.out or out_dir / f"eval_phase{state.phase}.json", _dump(report.to_dict()))
    print(f"phase {report.phase}: overall {report.overall:.4f} old {_pct(report.old)} new {_pct(report.new)}")
    return [out, _manifest(args, {"checkpoint": str(ckpt)}, [out])]


def _pct(v: float | None) -> str:
    return "-" if v is None else f"{v:.4f}"


def cmd_report(args: argparse.Namespace) -> list[Path]:
    run_dir = args.out_dir
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory {run_dir} does not exist")
    doc, reports = load_report(run_dir / "report.json")
    outputs = [
        _write(run_dir / "phases.csv", phases_csv(reports)),
        _write(run_dir / "buckets.tsv", buckets_tsv(reports)),
    ]
    print("phase  overall  old     new     forget  (0,10)")
    for r in reports:
        print(
            f"{r.phase:<6} {r.overall:.4f}   {_pct(r.old):<7} {_pct(r.new):<7} {_pct(r.forgetting):<7} {_pct(r.buckets['(0,10)'])}"
        )
    return outputs + [_manifest(args, doc.get("config", {}), outputs)]


# ---------------------------------------------------------------------------


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args)
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"lstail {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"lstail {args.command}: path error: {exc}", file=sys.stderr)
        return 1
    except (LstError, ValueError, KeyError) as exc:
        print(f"lstail {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0
