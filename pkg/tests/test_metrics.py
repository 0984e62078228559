from __future__ import annotations

import csv
import io

import numpy as np
import pytest

from lstail.errors import ScopeError
from lstail.metrics import (
    BUCKET_NAMES,
    MetricsReport,
    buckets_of,
    buckets_tsv,
    emit_report,
    evaluate,
    fill_forgetting,
    load_report,
    phases_csv,
    restrict,
)
from lstail.model import FeatureAdapter, init_state


@pytest.mark.parametrize(
    "n,want",
    [
        (1, {"(0,1]", "(0,5)", "(0,10)"}),
        (4, {"(0,5)", "(0,10)"}),
        (5, {"(0,10)"}),
        (9, {"(0,10)"}),
        (10, {"[10,100)"}),
        (99, {"[10,100)"}),
        (100, {"[100,1000)"}),
        (1000, {"[1000,inf)"}),
        (0, set()),
    ],
)
def test_bucket_edges(n, want):
    assert buckets_of(n) == want


def axis_model(classes):
    """Identity adapter and one-hot columns: predicts the argmax coordinate."""
    s = init_state(len(classes), list(classes), np.random.default_rng(0))
    s.adapter = FeatureAdapter.identity(len(classes))
    s.classifier.W = np.eye(len(classes))
    return s


def test_evaluate_hand_computed():
    s = axis_model([0, 1, 2])
    e = np.eye(3)
    X = np.stack([e[0], e[0], e[1], e[0], e[2], e[2]])
    y = np.array([0, 0, 1, 1, 2, 2])  # class 0: 2/2, class 1: 1/2, class 2: 2/2
    r = evaluate(s, X, y, {0: 500, 1: 50, 2: 3}, new_classes=[2])
    assert r.per_class == {0: 1.0, 1: 0.5, 2: 1.0}
    assert r.overall == pytest.approx(2.5 / 3)
    assert r.old == 0.75 and r.new == 1.0
    assert r.buckets["[100,1000)"] == 1.0 and r.buckets["[10,100)"] == 0.5
    assert r.buckets["(0,5)"] == 1.0 and r.buckets["(0,1]"] is None
    assert r.bucket_sizes["(0,10)"] == 1
    assert r.n_test == 6


def test_evaluate_rejects_unknown_classes():
    with pytest.raises(ScopeError):
        evaluate(axis_model([0, 1]), np.eye(3)[:, :2], np.array([0, 1, 2]), {0: 1, 1: 1, 2: 1})


def test_restrict():
    X, y = restrict(np.arange(5)[:, None], np.array([0, 1, 2, 1, 0]), [1, 2])
    assert X.ravel().tolist() == [1, 2, 3] and y.tolist() == [1, 2, 1]


def rep(phase, overall, old):
    return MetricsReport(phase, overall, old, None, {b: None for b in BUCKET_NAMES}, {b: 0 for b in BUCKET_NAMES}, {}, 0)


def test_forgetting_is_old_minus_previous_overall():
    reports = [rep(0, 0.8, None), rep(1, 0.6, 0.7), rep(2, 0.5, 0.55)]
    fill_forgetting(reports)
    assert reports[0].forgetting is None
    assert reports[1].forgetting == pytest.approx(-0.1)
    assert reports[2].forgetting == pytest.approx(-0.05)


def test_tables():
    reports = [rep(0, 0.8, None), rep(1, 0.6, 0.7)]
    rows = list(csv.DictReader(io.StringIO(phases_csv(reports))))
    assert {r["metric"] for r in rows} >= {"overall", "old", "forgetting", "(0,10)"}
    assert [r["value"] for r in rows if r["metric"] == "overall"] == ["0.8", "0.6"]
    assert [r["value"] for r in rows if r["metric"] == "old"] == ["", "0.7"]
    lines = buckets_tsv(reports).splitlines()
    assert lines[0].split("\t") == ["phase", *BUCKET_NAMES] and len(lines) == 3


class FakeRun:
    def __init__(self, reports):
        self.reports = reports

    class config:
        @staticmethod
        def to_dict():
            return {"seed": 1}


def test_emit_and_load(tmp_path):
    r = rep(0, 0.8, None)
    r.per_class = {3: 0.5}
    paths = emit_report(FakeRun([r]), tmp_path)
    assert sorted(p.name for p in paths) == ["buckets.tsv", "phases.csv", "report.json"]
    doc, back = load_report(tmp_path / "report.json")
    assert doc["config"] == {"seed": 1}
    assert back[0] == r
    with pytest.raises(FileNotFoundError):
        load_report(tmp_path / "missing.json")
