"""Planning replay on a real-format annotation file.

The shipped fixture is a tiny COCO file with three categories: "person" (8
instances over 4 images), "guitar" (4 over 3) and "banjo" (2 over 2). With a
bootstrap of one class and one class per phase there are two incremental
phases. For each, we print the replay quota of every old class next to the
plans produced by the three replay strategies.

Run: python3 demos/01_replay_plans.py
"""
from __future__ import annotations

from importlib import resources

from lstail.dataset import parse_coco
from lstail.partition import make_groups, sort_classes
from lstail.replay import compute_stats, make_plan, replay_quota

text = resources.files("lstail").joinpath("fixtures/tiny_coco.json").read_text()
index = parse_coco(text)
groups = make_groups(sort_classes(index), b=1, phase_size=1)
print("class counts:", index.class_count)
print("groups:", groups.groups)

for t in range(1, groups.T + 1):
    stats = compute_stats(index, groups, t)
    print(f"\nphase {t}: new classes {groups.groups[t]}, mean instances per new class {stats.nbar_C:g}")
    quota = replay_quota(index, groups, t)
    for k in groups.old_classes(t):
        avail = len(index.class_images[k])
        print(f"  old class {k}: {stats.nbar_k[k]:.3f} instances/image -> replay {quota[k]} of {avail} images")
    for strategy in ("balanced_replay", "full_replay", "one_instance_per_image"):
        plan = make_plan(index, groups, t, strategy, seed=0)
        print(f"  {strategy:<24} replay {plan.entries_per_class()}  forward passes {plan.feedforward_count}")
