"""Split classes by popularity into a bootstrap group and incremental bins,
and collect the images each group owns."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .dataset import DatasetIndex
from .errors import RangeError, StructuralError


@dataclass(frozen=True)
class ClassGroups:
    groups: tuple[tuple[int, ...], ...]
    b: int
    phase_size: int

    @property
    def T(self) -> int:
        """Number of incremental phases (groups after the bootstrap one)."""
        return len(self.groups) - 1

    def old_classes(self, t: int) -> tuple[int, ...]:
        return tuple(c for g in self.groups[:t] for c in g)

    def seen_classes(self, t: int) -> tuple[int, ...]:
        return tuple(c for g in self.groups[: t + 1] for c in g)

    def group_of(self) -> dict[int, int]:
        return {c: i for i, g in enumerate(self.groups) for c in g}

    def to_dict(self) -> dict:
        return {"b": self.b, "phase_size": self.phase_size, "groups": [list(g) for g in self.groups]}


@dataclass(frozen=True)
class PhaseSubsets:
    subsets: tuple[tuple[int, ...], ...]

    def to_dict(self) -> dict:
        return {"subsets": [list(s) for s in self.subsets]}


def sort_classes(index: DatasetIndex) -> list[int]:
    """Classes by descending instance count; ties go to the smaller id."""
    return sorted(index.class_count, key=lambda c: (-index.class_count[c], c))


def make_groups(sorted_classes: list[int], b: int, phase_size: int) -> ClassGroups:
    n = len(sorted_classes)
    if not 0 < b <= n:
        raise RangeError(f"b={b} must lie in [1, {n}]")
    if phase_size < 1:
        raise RangeError("phase_size must be >= 1")
    rest = sorted_classes[b:]
    T = math.ceil(len(rest) / phase_size)
    groups = [tuple(sorted_classes[:b])]
    groups += [tuple(rest[i * phase_size : (i + 1) * phase_size]) for i in range(T)]
    return ClassGroups(tuple(groups), b, phase_size)


def assign_subsets(index: DatasetIndex, groups: ClassGroups) -> PhaseSubsets:
    subsets = []
    for g in groups.groups:
        imgs: set[int] = set()
        for c in g:
            if c not in index.class_images:
                raise StructuralError(f"class {c} is not in the index")
            imgs.update(index.class_images[c])
        subsets.append(tuple(sorted(imgs)))
    return PhaseSubsets(tuple(subsets))
