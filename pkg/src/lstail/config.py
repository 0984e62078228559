"""Experiment config files.

One JSON object: every ``TrainConfig`` field at the top level, plus an
optional ``"synth"`` object of ``SynthConfig`` fields (the synthetic dataset
to train on) and ``"test_per_class"``. A ``synth`` section without its own
seed takes the training seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Mapping

from .dataset import SynthConfig
from .errors import ConfigError
from .trainer import TrainConfig

EXTRA_KEYS = ("synth", "test_per_class")


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig
    synth: SynthConfig | None = None
    test_per_class: int = 20

    def to_dict(self) -> dict:
        d = self.train.to_dict()
        if self.synth is not None:
            d["synth"] = {f.name: getattr(self.synth, f.name) for f in fields(SynthConfig)}
        d["test_per_class"] = self.test_per_class
        return d


def experiment_config(d: Mapping, **overrides) -> ExperimentConfig:
    d = {**d, **overrides}
    train = TrainConfig.from_dict({k: v for k, v in d.items() if k not in EXTRA_KEYS})
    synth = None
    if d.get("synth") is not None:
        s = dict(d["synth"])
        known = {f.name for f in fields(SynthConfig)}
        if set(s) - known:
            raise ConfigError(f"unknown synth options {sorted(set(s) - known)}")
        s.setdefault("seed", train.seed)
        synth = SynthConfig(**s)
    per_class = int(d.get("test_per_class", 20))
    if per_class < 1:
        raise ConfigError("test_per_class must be >= 1")
    return ExperimentConfig(train, synth, per_class)


def read_json(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file {path} does not exist")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return d


def reference_dict() -> dict:
    return json.loads(resources.files("lstail").joinpath("configs/reference.json").read_text())


def reference_config(**overrides) -> ExperimentConfig:
    """The shipped desk-scale benchmark, optionally with fields replaced
    (e.g. ``seed=3`` or ``use_mwg=True``)."""
    return experiment_config(reference_dict(), **overrides)
