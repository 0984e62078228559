from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lstail.dataset import (
    InstanceAnnotation,
    SynthConfig,
    build_index,
    class_prototypes,
    from_json,
    generate_synthetic,
    load_any,
    parse_coco,
    synthetic_test_set,
    to_coco,
    to_json,
    zipf_counts,
)
from lstail.errors import ConfigError, DimensionError, ParseError, StructuralError

from conftest import make_index


def test_build_index_counts_one_class():
    idx = build_index([InstanceAnnotation(0, 1, 5), InstanceAnnotation(1, 1, 5)], [1])
    assert idx.class_count == {5: 2}
    assert idx.class_images == {5: (1,)}


def test_build_index_empty():
    idx = build_index([], [])
    assert idx.class_count == {} and idx.class_images == {}
    assert idx.feature_dim is None and len(idx) == 0


def test_build_index_dangling_image():
    with pytest.raises(StructuralError):
        build_index([InstanceAnnotation(0, 99, 1)], [1])


def test_build_index_duplicate_instance():
    with pytest.raises(StructuralError):
        build_index([InstanceAnnotation(0, 1, 1), InstanceAnnotation(0, 1, 2)], [1])


def test_build_index_mixed_dims():
    anns = [InstanceAnnotation(0, 1, 1, np.zeros(3)), InstanceAnnotation(1, 1, 1, np.zeros(4))]
    with pytest.raises(DimensionError):
        build_index(anns, [1])


def test_build_index_partial_features():
    anns = [InstanceAnnotation(0, 1, 1, np.zeros(3)), InstanceAnnotation(1, 1, 1)]
    with pytest.raises(DimensionError):
        build_index(anns, [1])


def test_build_index_rejects_nonfinite_feature():
    with pytest.raises(ValueError):
        build_index([InstanceAnnotation(0, 1, 1, np.array([0.0, np.nan]))], [1])


def test_rows_sorted_by_instance_id():
    idx = build_index([InstanceAnnotation(9, 1, 1), InstanceAnnotation(2, 1, 1), InstanceAnnotation(5, 2, 3)], [1, 2])
    assert idx.instance_ids.tolist() == [2, 5, 9]
    assert idx.rows(1, 1).tolist() == [0, 2]
    assert idx.image_classes(2) == (3,)


def _coco(anns, images=(1, 2), cats=(7,)):
    return json.dumps({"images": [{"id": i} for i in images], "annotations": anns, "categories": [{"id": c} for c in cats]})


def test_parse_coco_counts():
    anns = [{"id": i, "image_id": 1 + i % 2, "category_id": 7} for i in range(3)]
    idx = parse_coco(_coco(anns))
    assert idx.class_count == {7: 3}
    assert idx.class_images[7] == (1, 2)
    assert idx.feature_dim is None


def test_parse_coco_empty_annotations():
    idx = parse_coco(_coco([]))
    assert idx.class_count == {} and idx.images == (1, 2)


def test_parse_coco_missing_category_names_path():
    anns = [{"id": 0, "image_id": 1, "category_id": 7}, {"id": 1, "image_id": 1}]
    with pytest.raises(ParseError) as err:
        parse_coco(_coco(anns))
    assert err.value.path == "annotations[1].category_id"


def test_parse_coco_missing_top_level_key():
    with pytest.raises(ParseError) as err:
        parse_coco(json.dumps({"images": [], "annotations": []}))
    assert err.value.path == "categories"


def test_parse_coco_unknown_category_and_image():
    with pytest.raises(StructuralError):
        parse_coco(_coco([{"id": 0, "image_id": 1, "category_id": 8}]))
    with pytest.raises(StructuralError):
        parse_coco(_coco([{"id": 0, "image_id": 3, "category_id": 7}]))


def test_parse_coco_keeps_category_ids_verbatim(coco_fixture_text):
    idx = parse_coco(coco_fixture_text)
    assert idx.class_count == {1: 8, 2: 4, 3: 2}
    assert idx.class_images == {1: (10, 11, 12, 13), 2: (11, 14, 15), 3: (13, 16)}


def test_load_any_detects_format(small_index, coco_fixture_text):
    assert load_any(to_json(small_index)).features is not None
    assert load_any(coco_fixture_text).features is None


def test_zipf_counts_formula():
    c = zipf_counts(60, 1.0, 1000)
    assert c[0] == 1000 and c[59] == round(1000 / 60) == 17
    assert zipf_counts(5, 3.0, 2) == [2, 1, 1, 1, 1]


def test_synthetic_counts_without_cooccurrence():
    cfg = SynthConfig(num_classes=60, zipf_exponent=1.0, max_instances=1000, cooccur_head_prob=0.0)
    idx = generate_synthetic(cfg)
    assert idx.class_count[0] == 1000 and idx.class_count[59] == 17
    assert [idx.class_count[k] for k in range(60)] == zipf_counts(60, 1.0, 1000)


def test_synthetic_cooccurrence_only_raises_head():
    cfg = SynthConfig(num_classes=30, max_instances=100, cooccur_head_prob=0.8, seed=3)
    idx = generate_synthetic(cfg)
    base = zipf_counts(30, 1.0, 100)
    extra = [idx.class_count[k] - base[k] for k in range(30)]
    assert all(e == 0 for e in extra[cfg.num_head :])
    assert sum(extra[: cfg.num_head]) > 0


def test_synthetic_deterministic():
    cfg = SynthConfig(seed=11)
    assert to_json(generate_synthetic(cfg)) == to_json(generate_synthetic(cfg))
    assert to_json(generate_synthetic(cfg)) != to_json(generate_synthetic(SynthConfig(seed=12)))


def test_zero_noise_features_are_prototypes():
    cfg = SynthConfig(num_classes=8, max_instances=10, noise_sigma=0.0, seed=2)
    idx = generate_synthetic(cfg)
    protos = class_prototypes(cfg)
    assert np.array_equal(idx.features, protos[idx.class_ids])
    np.testing.assert_allclose(np.linalg.norm(protos, axis=1), cfg.prototype_scale)


def test_synthetic_test_set_balanced():
    X, y = synthetic_test_set(SynthConfig(num_classes=5, feature_dim=3), per_class=4)
    assert X.shape == (20, 3)
    assert np.bincount(y).tolist() == [4] * 5


@pytest.mark.parametrize(
    "kw",
    [{"num_classes": 1}, {"zipf_exponent": 0.0}, {"max_instances": 0}, {"noise_sigma": -1.0}, {"cooccur_head_prob": 1.5}],
)
def test_synth_config_validation(kw):
    with pytest.raises(ConfigError):
        SynthConfig(**kw)


layouts = st.lists(st.tuples(st.integers(0, 6), st.integers(0, 4)), max_size=40)


@settings(max_examples=60, deadline=None)
@given(layouts)
def test_index_invariants(layout):
    idx = make_index(layout)
    assert sum(idx.class_count.values()) == len(layout)
    for k, imgs in idx.class_images.items():
        assert imgs == tuple(sorted({img for img, c in layout if c == k}))
        assert idx.class_count[k] == sum(c == k for _, c in layout)


@settings(max_examples=60, deadline=None)
@given(layouts)
def test_coco_round_trip(layout):
    idx = make_index(layout)
    back = parse_coco(to_coco(idx))
    assert back.class_count == idx.class_count
    assert back.class_images == idx.class_images
    assert back.instance_ids.tolist() == idx.instance_ids.tolist()
    assert back.images == idx.images


@settings(max_examples=30, deadline=None)
@given(layouts.filter(bool), st.integers(0, 2**32 - 1))
def test_native_round_trip_bit_exact(layout, seed):
    idx = make_index(layout, dim=3, seed=seed)
    back = from_json(to_json(idx))
    assert np.array_equal(back.features, idx.features)
    assert back.class_ids.tolist() == idx.class_ids.tolist()
