"""Evaluation bucketed by training-instance count, forgetting tracking, and
report files.

Classification accuracy stands in for mask AP: there is no detector here, so
per-class top-1 accuracy is averaged within the same instance-count buckets.
All accuracies are macro (mean over classes), so head classes do not drown
out the tail.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ScopeError
from .model import ModelState, predict

REPORT_SCHEMA = "lstail-report/1"

# name -> membership test on the training-instance count
BUCKETS: dict[str, Callable[[int], bool]] = {
    "(0,1]": lambda n: 0 < n <= 1,
    "(0,5)": lambda n: 0 < n < 5,
    "(0,10)": lambda n: 0 < n < 10,
    "[10,100)": lambda n: 10 <= n < 100,
    "[100,1000)": lambda n: 100 <= n < 1000,
    "[1000,inf)": lambda n: n >= 1000,
}
BUCKET_NAMES = tuple(BUCKETS)
SERIES = ("overall", "old", "new", "forgetting") + BUCKET_NAMES


def buckets_of(count: int) -> frozenset[str]:
    return frozenset(name for name, test in BUCKETS.items() if test(count))


def bucketize(class_count: Mapping[int, int], classes: Iterable[int] | None = None) -> dict[int, frozenset[str]]:
    """Bucket membership per class from *training* counts."""
    classes = class_count.keys() if classes is None else classes
    return {c: buckets_of(class_count[c]) for c in classes}


@dataclass
class MetricsReport:
    phase: int
    overall: float
    old: float | None
    new: float | None
    buckets: dict[str, float | None]
    bucket_sizes: dict[str, int]
    per_class: dict[int, float]
    n_test: int
    n_train: int = 0
    forgetting: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class"] = {str(k): v for k, v in self.per_class.items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsReport":
        d = dict(d)
        d["per_class"] = {int(k): v for k, v in d["per_class"].items()}
        return cls(**d)


def per_class_accuracy(pred: np.ndarray, y: np.ndarray) -> dict[int, float]:
    return {int(c): float(np.mean(pred[y == c] == c)) for c in np.unique(y)}


def _macro(per_class: Mapping[int, float], classes: Iterable[int]) -> float | None:
    vals = [per_class[c] for c in classes if c in per_class]
    return float(np.mean(vals)) if vals else None


def restrict(X: np.ndarray, y: np.ndarray, classes: Iterable[int]) -> tuple[np.ndarray, np.ndarray]:
    keep = np.isin(y, np.fromiter(classes, dtype=np.int64))
    return X[keep], y[keep]


def evaluate(
    state: ModelState,
    X: np.ndarray,
    y: np.ndarray,
    class_count: Mapping[int, int],
    new_classes: Sequence[int] = (),
) -> MetricsReport:
    """Score ``state`` on a test set whose classes it already knows.

    Classes in ``new_classes`` count as new, every other known class as old.
    """
    known = set(state.class_ids)
    unseen = set(np.unique(y).tolist()) - known
    if unseen:
        raise ScopeError(f"test classes {sorted(unseen)} are not covered by the model")
    pred = predict(state, X) if len(X) else np.empty(0, dtype=np.int64)
    per_class = per_class_accuracy(pred, y)
    membership = bucketize(class_count, per_class)
    new = set(new_classes)
    buckets, sizes = {}, {}
    for name in BUCKET_NAMES:
        members = [c for c in per_class if name in membership[c]]
        sizes[name] = len(members)
        buckets[name] = _macro(per_class, members)
    return MetricsReport(
        phase=state.phase,
        overall=_macro(per_class, per_class) or 0.0,
        old=_macro(per_class, [c for c in per_class if c not in new]),
        new=_macro(per_class, [c for c in per_class if c in new]),
        buckets=buckets,
        bucket_sizes=sizes,
        per_class=per_class,
        n_test=int(len(y)),
    )


def fill_forgetting(reports: Sequence[MetricsReport]) -> None:
    """Forgetting at phase t: accuracy on the classes old at t, minus the
    accuracy on that same class set one phase earlier (the earlier phase's
    overall score)."""
    for prev, cur in zip(reports, reports[1:]):
        if cur.old is not None:
            cur.forgetting = cur.old - prev.overall


def series(reports: Sequence[MetricsReport]) -> dict[str, list[float | None]]:
    out: dict[str, list[float | None]] = {k: [] for k in SERIES}
    for r in reports:
        out["overall"].append(r.overall)
        out["old"].append(r.old)
        out["new"].append(r.new)
        out["forgetting"].append(r.forgetting)
        for b in BUCKET_NAMES:
            out[b].append(r.buckets[b])
    return out


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def phases_csv(reports: Sequence[MetricsReport]) -> str:
    """Long format: one ``phase,metric,value`` row per phase and series."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["phase", "metric", "value"])
    for r in reports:
        s = series([r])
        for name in SERIES:
            w.writerow([r.phase, name, _fmt(s[name][0])])
    return buf.getvalue()


def buckets_tsv(reports: Sequence[MetricsReport]) -> str:
    lines = ["\t".join(("phase",) + BUCKET_NAMES)]
    for r in reports:
        lines.append("\t".join([str(r.phase)] + [_fmt(r.buckets[b]) for b in BUCKET_NAMES]))
    return "\n".join(lines) + "\n"


def report_dict(reports: Sequence[MetricsReport], config: Mapping | None = None, extra: Mapping | None = None) -> dict:
    d = {"schema": REPORT_SCHEMA, "config": dict(config or {}), "phases": [r.to_dict() for r in reports]}
    d.update(extra or {})
    return d


def load_report(path: str | Path) -> tuple[dict, list[MetricsReport]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no report at {path}")
    doc = json.loads(path.read_text())
    if doc.get("schema") != REPORT_SCHEMA:
        raise ValueError(f"{path}: unexpected schema {doc.get('schema')!r}")
    return doc, [MetricsReport.from_dict(p) for p in doc["phases"]]


def emit_report(run, out_dir: str | Path) -> list[Path]:
    """Write ``report.json``, ``phases.csv`` and ``buckets.tsv`` for a run
    (anything with ``config.to_dict()`` and ``reports``)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = report_dict(run.reports, run.config.to_dict(), getattr(run, "report_extra", lambda: {})())
    files = {
        "report.json": json.dumps(doc, indent=1, sort_keys=True) + "\n",
        "phases.csv": phases_csv(run.reports),
        "buckets.tsv": buckets_tsv(run.reports),
    }
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text)
        paths.append(p)
    return paths
