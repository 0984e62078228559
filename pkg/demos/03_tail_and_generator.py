"""Where do the gains land? Accuracy by training-instance bucket.

Compares, on one seed of the reference benchmark:
  full replay   every old image replayed every phase (head classes dominate)
  balanced      instance-level balanced replay with distillation
  + generator   the same with new-class weights produced by the generator

Run: python3 demos/03_tail_and_generator.py [seed]   (about 15 s)
"""
from __future__ import annotations

import sys

import numpy as np

from lstail.config import reference_config
from lstail.dataset import generate_synthetic, synthetic_test_set
from lstail.metrics import BUCKET_NAMES
from lstail.trainer import run_experiment

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
arms = {
    "full replay": {"replay_strategy": "full_replay"},
    "balanced": {},
    "+ generator": {"use_mwg": True},
}

print(f"{'arm':<12}{'overall':>9}" + "".join(f"{b:>12}" for b in BUCKET_NAMES) + f"{'<=5 shots':>11}{'passes':>8}")
for name, overrides in arms.items():
    exp = reference_config(seed=seed, **overrides)
    index = generate_synthetic(exp.synth)
    run = run_experiment(index, exp.train, synthetic_test_set(exp.synth, exp.test_per_class))
    final = run.reports[-1]
    few = np.mean([final.per_class[c] for c, n in index.class_count.items() if n <= 5])
    passes = sum(p.feedforward_count for p in run.plans[1:])
    cells = "".join(f"{'-' if final.buckets[b] is None else format(final.buckets[b], '.3f'):>12}" for b in BUCKET_NAMES)
    print(f"{name:<12}{final.overall:>9.3f}{cells}{few:>11.3f}{passes:>8}")
