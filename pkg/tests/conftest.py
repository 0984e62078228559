from __future__ import annotations

from importlib import resources

import numpy as np
import pytest

from lstail.dataset import InstanceAnnotation, SynthConfig, build_index, generate_synthetic


@pytest.fixture
def coco_fixture_text() -> str:
    return resources.files("lstail").joinpath("fixtures/tiny_coco.json").read_text()


@pytest.fixture
def small_synth() -> SynthConfig:
    return SynthConfig(num_classes=12, max_instances=40, feature_dim=6, seed=7)


@pytest.fixture
def small_index(small_synth):
    return generate_synthetic(small_synth)


def make_index(layout, dim=None, seed=0):
    """Index from ``[(image_id, class_id), ...]``; instance ids are positions."""
    rng = np.random.default_rng(seed)
    anns = [
        InstanceAnnotation(i, img, c, None if dim is None else rng.normal(size=dim))
        for i, (img, c) in enumerate(layout)
    ]
    return build_index(anns, sorted({img for img, _ in layout}))


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
