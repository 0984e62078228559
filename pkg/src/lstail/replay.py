"""Per-phase training-set planning: instance-level balanced replay plus the
full-replay, one-instance-per-image and no-replay baselines.

A plan names the new images of phase ``t`` (all annotations of the phase's
new classes are trainable there) and a list of replay entries. An entry is an
``(image, valid_class)`` pair: only that class's annotations in that image are
trainable; every other annotation of the image is masked out. The
one-instance baseline additionally pins a single instance per entry.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .dataset import DatasetIndex
from .errors import ConfigError, DegeneratePhaseError, MaterializationError, RangeError, StructuralError
from .partition import ClassGroups

STRATEGIES = ("balanced_replay", "full_replay", "one_instance_per_image", "none")
_ALIASES = {"balanced": "balanced_replay", "full": "full_replay", "one_instance": "one_instance_per_image"}


def canonical_strategy(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in STRATEGIES:
        raise ConfigError(f"unknown replay strategy {name!r}; choose from {STRATEGIES}")
    return name


@dataclass(frozen=True)
class ReplayStats:
    nbar_C: float
    nbar_k: dict[int, float]


@dataclass(frozen=True)
class ReplayEntry:
    image_id: int
    valid_class: int
    instance_id: int | None = None


@dataclass(frozen=True)
class PhasePlan:
    phase: int
    strategy: str
    seed: int | None
    new_classes: tuple[int, ...]
    new_images: tuple[int, ...]
    replay_entries: tuple[ReplayEntry, ...] = field(default=())

    @property
    def feedforward_count(self) -> int:
        """Image passes needed for one sweep: one per new image, one per entry."""
        return len(self.new_images) + len(self.replay_entries)

    def entries_per_class(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for e in self.replay_entries:
            out[e.valid_class] = out.get(e.valid_class, 0) + 1
        return out

    def to_dict(self) -> dict:
        replay = []
        for e in self.replay_entries:
            rec = {"image_id": e.image_id, "valid_class": e.valid_class}
            if e.instance_id is not None:
                rec["instance_id"] = e.instance_id
            replay.append(rec)
        return {
            "phase": self.phase,
            "strategy": self.strategy,
            "seed": self.seed,
            "new_classes": list(self.new_classes),
            "new_images": list(self.new_images),
            "replay": replay,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "PhasePlan":
        return cls(
            phase=int(d["phase"]),
            strategy=canonical_strategy(d["strategy"]),
            seed=d.get("seed"),
            new_classes=tuple(d.get("new_classes", ())),
            new_images=tuple(d["new_images"]),
            replay_entries=tuple(
                ReplayEntry(int(r["image_id"]), int(r["valid_class"]), r.get("instance_id"))
                for r in d["replay"]
            ),
        )


@dataclass(frozen=True)
class TrainingSample:
    feature: np.ndarray
    label: int
    phase_of_origin: int


def _check_phase(groups: ClassGroups, t: int) -> None:
    if not 1 <= t <= groups.T:
        raise RangeError(f"phase {t} outside [1, {groups.T}]")


def compute_stats(index: DatasetIndex, groups: ClassGroups, t: int) -> ReplayStats:
    _check_phase(groups, t)
    new = groups.groups[t]
    if not new:
        raise DegeneratePhaseError(f"phase {t} has no classes")
    nbar_C = sum(index.class_count[c] for c in new) / len(new)
    nbar_k = {k: index.class_count[k] / len(index.class_images[k]) for k in groups.old_classes(t)}
    return ReplayStats(nbar_C, nbar_k)


def replay_quota(index: DatasetIndex, groups: ClassGroups, t: int) -> dict[int, int]:
    """Unclamped ``ceil(nbar_C / nbar_k)`` per old class, in exact integer arithmetic.

    nbar_C / nbar_k = (S * I_k) / (|C_t| * N_k) with S the instance total of the
    new classes, I_k and N_k the image and instance counts of class k.
    """
    _check_phase(groups, t)
    new = groups.groups[t]
    if not new:
        raise DegeneratePhaseError(f"phase {t} has no classes")
    S = sum(index.class_count[c] for c in new)
    out = {}
    for k in groups.old_classes(t):
        num = S * len(index.class_images[k])
        den = len(new) * index.class_count[k]
        out[k] = -(-num // den)
    return out


def _new_part(groups: ClassGroups, index: DatasetIndex, t: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    new = groups.groups[t]
    imgs: set[int] = set()
    for c in new:
        if c not in index.class_images:
            raise StructuralError(f"class {c} is not in the index")
        imgs.update(index.class_images[c])
    return tuple(new), tuple(sorted(imgs))


def plan_base(index: DatasetIndex, groups: ClassGroups) -> PhasePlan:
    """Phase 0: the bootstrap images with all base-class annotations valid."""
    new, imgs = _new_part(groups, index, 0)
    return PhasePlan(0, "none", None, new, imgs)


def plan_no_replay(index: DatasetIndex, groups: ClassGroups, t: int) -> PhasePlan:
    _check_phase(groups, t)
    new, imgs = _new_part(groups, index, t)
    return PhasePlan(t, "none", None, new, imgs)


def plan_balanced_replay(index: DatasetIndex, groups: ClassGroups, t: int, seed: int) -> PhasePlan:
    quota = replay_quota(index, groups, t)
    rng = np.random.default_rng(seed)
    entries = []
    for k in groups.old_classes(t):
        cand = index.class_images[k]
        m = min(quota[k], len(cand))
        picks = rng.choice(len(cand), size=m, replace=False)
        entries.extend(ReplayEntry(cand[i], k) for i in sorted(picks.tolist()))
    new, imgs = _new_part(groups, index, t)
    return PhasePlan(t, "balanced_replay", seed, new, imgs, tuple(entries))


def plan_full_replay(index: DatasetIndex, groups: ClassGroups, t: int) -> PhasePlan:
    _check_phase(groups, t)
    entries = [ReplayEntry(img, k) for k in groups.old_classes(t) for img in index.class_images[k]]
    new, imgs = _new_part(groups, index, t)
    return PhasePlan(t, "full_replay", None, new, imgs, tuple(entries))


def plan_one_instance_per_image(
    index: DatasetIndex, groups: ClassGroups, t: int, target_per_class: int, seed: int
) -> PhasePlan:
    """Expose ``target_per_class`` single instances per old class, each as its
    own image pass (clamped to the class's instance count)."""
    _check_phase(groups, t)
    rng = np.random.default_rng(seed)
    entries = []
    for k in groups.old_classes(t):
        rows = np.flatnonzero(index.class_ids == k)
        m = min(target_per_class, len(rows))
        picks = np.sort(rng.choice(len(rows), size=m, replace=False))
        for r in rows[picks]:
            entries.append(ReplayEntry(int(index.image_ids[r]), k, int(index.instance_ids[r])))
    new, imgs = _new_part(groups, index, t)
    return PhasePlan(t, "one_instance_per_image", seed, new, imgs, tuple(entries))


def make_plan(
    index: DatasetIndex,
    groups: ClassGroups,
    t: int,
    strategy: str,
    seed: int = 0,
    target_per_class: int | None = None,
) -> PhasePlan:
    """Dispatch on strategy name. The one-instance baseline defaults its target
    to ``ceil(nbar_C)`` so it matches balanced replay's instance budget."""
    strategy = canonical_strategy(strategy)
    if t == 0:
        return plan_base(index, groups)
    if strategy == "balanced_replay":
        return plan_balanced_replay(index, groups, t, seed)
    if strategy == "full_replay":
        return plan_full_replay(index, groups, t)
    if strategy == "one_instance_per_image":
        if target_per_class is None:
            target_per_class = math.ceil(compute_stats(index, groups, t).nbar_C)
        return plan_one_instance_per_image(index, groups, t, target_per_class, seed)
    return plan_no_replay(index, groups, t)


def trainable_rows(index: DatasetIndex, plan: PhasePlan) -> list[int]:
    """Row indices of every trainable annotation, in plan order.

    Replay rows come first, then new-image rows. A row can repeat when the
    same instance is replayed more than once.
    """
    rows: list[int] = []
    for e in plan.replay_entries:
        if e.instance_id is None:
            rows.extend(index.rows(e.image_id, e.valid_class).tolist())
        else:
            r = int(np.searchsorted(index.instance_ids, e.instance_id))
            if r >= len(index) or index.instance_ids[r] != e.instance_id:
                raise StructuralError(f"unknown instance {e.instance_id}")
            if index.class_ids[r] != e.valid_class or index.image_ids[r] != e.image_id:
                raise StructuralError(f"instance {e.instance_id} is not a {e.valid_class} in image {e.image_id}")
            rows.append(r)
    for img in plan.new_images:
        for c in index.image_classes(img):
            if c in plan.new_classes:
                rows.extend(index.rows(img, c).tolist())
    return rows


def materialize(index: DatasetIndex, plan: PhasePlan, groups: ClassGroups) -> list[TrainingSample]:
    """One sample per trainable annotation under ``plan``; ``phase_of_origin``
    is the phase in which the sample's class was new."""
    if index.features is None:
        raise MaterializationError("index has no features (plan-only ingest)")
    group_of = groups.group_of()
    return [
        TrainingSample(index.features[r], int(index.class_ids[r]), group_of[int(index.class_ids[r])])
        for r in trainable_rows(index, plan)
    ]


def stack(samples: Iterable[TrainingSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Features, labels and phases of origin as arrays."""
    samples = list(samples)
    if not samples:
        return np.empty((0, 0)), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    X = np.stack([s.feature for s in samples])
    y = np.array([s.label for s in samples], dtype=np.int64)
    o = np.array([s.phase_of_origin for s in samples], dtype=np.int64)
    return X, y, o
