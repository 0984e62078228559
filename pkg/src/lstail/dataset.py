"""Dataset data model: instance annotations, the immutable index built over
them, COCO/LVIS ingestion, and a synthetic long-tailed feature generator.

Features live on annotations (one vector per object instance). Plan-only
ingests, such as a COCO file, carry no features at all.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, ParseError, StructuralError

DATASET_FORMAT = "lstail-dataset"
DATASET_VERSION = 1


@dataclass(frozen=True)
class InstanceAnnotation:
    instance_id: int
    image_id: int
    class_id: int
    feature: np.ndarray | None = field(default=None, compare=False)


@dataclass(frozen=True, eq=False)
class DatasetIndex:
    """Columnar catalog of images and instance annotations.

    Rows are sorted by instance id. ``class_images`` maps each class to the
    sorted tuple of distinct images holding at least one of its instances.
    Use :func:`build_index` rather than the constructor.
    """

    images: tuple[int, ...]
    instance_ids: np.ndarray
    image_ids: np.ndarray
    class_ids: np.ndarray
    features: np.ndarray | None
    class_count: dict[int, int]
    class_images: dict[int, tuple[int, ...]]
    feature_dim: int | None

    def __len__(self) -> int:
        return len(self.instance_ids)

    @property
    def classes(self) -> list[int]:
        return sorted(self.class_count)

    @property
    def annotations(self) -> list[InstanceAnnotation]:
        feats = self.features
        return [
            InstanceAnnotation(
                int(self.instance_ids[i]),
                int(self.image_ids[i]),
                int(self.class_ids[i]),
                None if feats is None else feats[i],
            )
            for i in range(len(self))
        ]

    @cached_property
    def _rows_by_image_class(self) -> dict[tuple[int, int], np.ndarray]:
        rows: dict[tuple[int, int], list[int]] = defaultdict(list)
        for i, (img, cls) in enumerate(zip(self.image_ids.tolist(), self.class_ids.tolist())):
            rows[(img, cls)].append(i)
        return {k: np.asarray(v, dtype=np.int64) for k, v in rows.items()}

    @cached_property
    def _classes_by_image(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, set[int]] = defaultdict(set)
        for img, cls in self._rows_by_image_class:
            out[img].add(cls)
        return {img: tuple(sorted(c)) for img, c in out.items()}

    def rows(self, image_id: int, class_id: int) -> np.ndarray:
        """Row indices of the annotations of ``class_id`` inside ``image_id``."""
        return self._rows_by_image_class.get((image_id, class_id), np.empty(0, dtype=np.int64))

    def image_classes(self, image_id: int) -> tuple[int, ...]:
        return self._classes_by_image.get(image_id, ())


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _index_from_columns(
    images: Iterable[int],
    instance_ids: np.ndarray,
    image_ids: np.ndarray,
    class_ids: np.ndarray,
    features: np.ndarray | None,
) -> DatasetIndex:
    image_list = sorted(set(int(i) for i in images))
    order = np.argsort(instance_ids, kind="stable")
    instance_ids = np.asarray(instance_ids, dtype=np.int64)[order]
    image_ids = np.asarray(image_ids, dtype=np.int64)[order]
    class_ids = np.asarray(class_ids, dtype=np.int64)[order]
    if len(instance_ids) and np.any(np.diff(instance_ids) == 0):
        dup = int(instance_ids[np.flatnonzero(np.diff(instance_ids) == 0)[0]])
        raise StructuralError(f"duplicate instance id {dup}")
    known = set(image_list)
    for img in np.unique(image_ids).tolist():
        if img not in known:
            raise StructuralError(f"annotation references unknown image {img}")

    dim = None
    if features is not None:
        features = np.ascontiguousarray(np.asarray(features, dtype=np.float64)[order])
        dim = int(features.shape[1])
        if not np.all(np.isfinite(features)):
            raise DimensionError("non-finite feature entries")

    class_count: dict[int, int] = {}
    class_images: dict[int, tuple[int, ...]] = {}
    for cls in np.unique(class_ids).tolist():
        mask = class_ids == cls
        class_count[cls] = int(mask.sum())
        class_images[cls] = tuple(np.unique(image_ids[mask]).tolist())

    return DatasetIndex(
        images=tuple(image_list),
        instance_ids=_freeze(instance_ids),
        image_ids=_freeze(image_ids),
        class_ids=_freeze(class_ids),
        features=None if features is None else _freeze(features),
        class_count=class_count,
        class_images=class_images,
        feature_dim=dim,
    )


def build_index(annotations: Sequence[InstanceAnnotation], images: Sequence[int]) -> DatasetIndex:
    """Build the index; every annotation must cite a listed image.

    Either all annotations carry a feature of one shared dimension, or none do.
    """
    if len(set(images)) != len(images):
        raise StructuralError("duplicate image ids")
    has_feat = [a.feature is not None for a in annotations]
    features = None
    if any(has_feat):
        if not all(has_feat):
            raise DimensionError("some annotations have features and some do not")
        dims = {np.asarray(a.feature).shape for a in annotations}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise DimensionError(f"mixed feature shapes {sorted(dims)}")
        features = np.stack([np.asarray(a.feature, dtype=np.float64) for a in annotations])
    return _index_from_columns(
        images,
        np.array([a.instance_id for a in annotations], dtype=np.int64),
        np.array([a.image_id for a in annotations], dtype=np.int64),
        np.array([a.class_id for a in annotations], dtype=np.int64),
        features,
    )


# ---------------------------------------------------------------------------
# COCO ingestion


def _require(obj: Any, key: str, path: str) -> Any:
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{path}.{key}" if path else key)
    return obj[key]


def parse_coco(json_text: str) -> DatasetIndex:
    """Read a COCO/LVIS detection annotation file. Geometry is ignored;
    category ids are kept verbatim."""
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise ParseError("$", f"invalid JSON ({exc})") from None
    images = _require(doc, "images", "")
    anns = _require(doc, "annotations", "")
    cats = _require(doc, "categories", "")
    image_ids = [int(_require(im, "id", f"images[{i}]")) for i, im in enumerate(images)]
    cat_ids = {int(_require(c, "id", f"categories[{i}]")) for i, c in enumerate(cats)}
    known_images = set(image_ids)

    rows = []
    for i, a in enumerate(anns):
        path = f"annotations[{i}]"
        ann_id = int(_require(a, "id", path))
        img = int(_require(a, "image_id", path))
        cat = int(_require(a, "category_id", path))
        if cat not in cat_ids:
            raise StructuralError(f"{path}.category_id: unknown category {cat}")
        if img not in known_images:
            raise StructuralError(f"{path}.image_id: unknown image {img}")
        rows.append((ann_id, img, cat))
    if len(known_images) != len(image_ids):
        raise StructuralError("duplicate image ids")
    arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return _index_from_columns(image_ids, arr[:, 0], arr[:, 1], arr[:, 2], None)


def to_coco(index: DatasetIndex) -> str:
    """Minimal COCO document (ids only) for an index."""
    doc = {
        "images": [{"id": i} for i in index.images],
        "annotations": [
            {"id": int(a), "image_id": int(im), "category_id": int(c)}
            for a, im, c in zip(index.instance_ids, index.image_ids, index.class_ids)
        ],
        "categories": [{"id": c} for c in index.classes],
    }
    return json.dumps(doc, sort_keys=True)


# ---------------------------------------------------------------------------
# Native serialization


def to_json(index: DatasetIndex) -> str:
    """Serialize to the native schema::

        {"format": "lstail-dataset", "version": 1, "feature_dim": d | null,
         "images": [id, ...],
         "annotations": [{"id", "image_id", "class_id", "feature"?: [float, ...]}]}

    Floats are written with ``repr`` precision, so loading is bit-exact.
    """
    anns = []
    for i in range(len(index)):
        rec: dict[str, Any] = {
            "id": int(index.instance_ids[i]),
            "image_id": int(index.image_ids[i]),
            "class_id": int(index.class_ids[i]),
        }
        if index.features is not None:
            rec["feature"] = index.features[i].tolist()
        anns.append(rec)
    doc = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "feature_dim": index.feature_dim,
        "images": list(index.images),
        "annotations": anns,
    }
    return json.dumps(doc)


def from_json(text: str) -> DatasetIndex:
    doc = json.loads(text)
    if _require(doc, "format", "") != DATASET_FORMAT:
        raise ParseError("format", f"expected {DATASET_FORMAT!r}")
    images = _require(doc, "images", "")
    anns = _require(doc, "annotations", "")
    out = []
    for i, a in enumerate(anns):
        path = f"annotations[{i}]"
        feat = a.get("feature")
        out.append(
            InstanceAnnotation(
                int(_require(a, "id", path)),
                int(_require(a, "image_id", path)),
                int(_require(a, "class_id", path)),
                None if feat is None else np.asarray(feat, dtype=np.float64),
            )
        )
    index = build_index(out, [int(i) for i in images])
    dim = doc.get("feature_dim")
    if dim is not None and index.feature_dim not in (None, dim):
        raise DimensionError(f"feature_dim {dim} does not match features ({index.feature_dim})")
    return index


def load_any(text: str) -> DatasetIndex:
    """Native dataset file or COCO annotation file, detected by content."""
    doc = json.loads(text)
    if isinstance(doc, dict) and doc.get("format") == DATASET_FORMAT:
        return from_json(text)
    return parse_coco(text)


# ---------------------------------------------------------------------------
# Synthetic long-tailed data


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic generator.

    Class ids equal popularity ranks: class 0 is the head. Each image holds
    instances of a single primary class (``1 + Poisson(mean_instances_per_image - 1)``
    of them, capped by what is left) and, with probability
    ``cooccur_head_prob``, one extra instance of a random head class
    (rank < num_classes / 10).
    """

    num_classes: int = 60
    zipf_exponent: float = 1.0
    max_instances: int = 200
    feature_dim: int = 16
    prototype_scale: float = 1.0
    noise_sigma: float = 0.3
    cooccur_head_prob: float = 0.3
    seed: int = 0
    mean_instances_per_image: float = 3.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if not self.zipf_exponent > 0:
            raise ConfigError("zipf_exponent must be positive")
        if self.max_instances < 1:
            raise ConfigError("max_instances must be >= 1")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        if not self.prototype_scale > 0:
            raise ConfigError("prototype_scale must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not 0.0 <= self.cooccur_head_prob <= 1.0:
            raise ConfigError("cooccur_head_prob must lie in [0, 1]")
        if self.mean_instances_per_image < 1:
            raise ConfigError("mean_instances_per_image must be >= 1")

    @property
    def num_head(self) -> int:
        return math.ceil(self.num_classes / 10)


def zipf_counts(num_classes: int, zipf_exponent: float, max_instances: int) -> list[int]:
    return [max(1, round(max_instances * (r + 1) ** -zipf_exponent)) for r in range(num_classes)]


def _streams(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def class_prototypes(config: SynthConfig) -> np.ndarray:
    """(num_classes, d) Gaussian directions scaled to ``prototype_scale``."""
    rng = _streams(config.seed)[0]
    p = rng.normal(size=(config.num_classes, config.feature_dim))
    return p / np.linalg.norm(p, axis=1, keepdims=True) * config.prototype_scale


def generate_synthetic(config: SynthConfig) -> DatasetIndex:
    _, rng_struct, rng_feat, _ = _streams(config.seed)
    counts = zipf_counts(config.num_classes, config.zipf_exponent, config.max_instances)

    image_of: list[int] = []
    class_of: list[int] = []
    n_images = 0
    lam = config.mean_instances_per_image - 1.0
    for cls, n in enumerate(counts):
        left = n
        while left > 0:
            k = min(left, 1 + int(rng_struct.poisson(lam)))
            image_of.extend([n_images] * k)
            class_of.extend([cls] * k)
            left -= k
            n_images += 1
    if config.cooccur_head_prob > 0:
        for img in range(n_images):
            if rng_struct.random() < config.cooccur_head_prob:
                image_of.append(img)
                class_of.append(int(rng_struct.integers(config.num_head)))

    protos = class_prototypes(config)
    labels = np.asarray(class_of, dtype=np.int64)
    noise = rng_feat.normal(size=(len(labels), config.feature_dim))
    features = protos[labels] + config.noise_sigma * noise
    return _index_from_columns(
        range(n_images),
        np.arange(len(labels), dtype=np.int64),
        np.asarray(image_of, dtype=np.int64),
        labels,
        features,
    )


def synthetic_test_set(config: SynthConfig, per_class: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Balanced held-out features drawn around the same prototypes as
    :func:`generate_synthetic` with the same config."""
    rng = _streams(config.seed)[3]
    protos = class_prototypes(config)
    labels = np.repeat(np.arange(config.num_classes, dtype=np.int64), per_class)
    feats = protos[labels] + config.noise_sigma * rng.normal(size=(len(labels), config.feature_dim))
    return feats, labels
