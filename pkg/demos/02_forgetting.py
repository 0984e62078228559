"""How much do replay and distillation protect old classes?

Trains the reference benchmark three times with one seed: the full method,
the same without distillation, and without both replay and distillation.
Old-class accuracy at each phase shows the collapse when nothing anchors
the old classes.

Run: python3 demos/02_forgetting.py [seed]   (about 10 s)
"""
from __future__ import annotations

import sys

from lstail.config import reference_config
from lstail.dataset import generate_synthetic, synthetic_test_set
from lstail.trainer import run_experiment

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
arms = {
    "replay + distill": {},
    "replay only": {"use_distill": False},
    "neither": {"replay_strategy": "none", "use_distill": False},
}

print(f"{'arm':<18}" + "".join(f"  phase {t} old/all" for t in range(1, 5)))
for name, overrides in arms.items():
    exp = reference_config(seed=seed, **overrides)
    index = generate_synthetic(exp.synth)
    run = run_experiment(index, exp.train, synthetic_test_set(exp.synth, exp.test_per_class))
    cells = [f"     {r.old:.2f} / {r.overall:.2f}" for r in run.reports[1:]]
    print(f"{name:<18}" + "".join(cells))
