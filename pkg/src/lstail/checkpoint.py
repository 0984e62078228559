"""Model checkpoints as JSON.

Layout::

    {"format": "lstail-model", "version": 1, "phase": t,
     "feature_dim": d, "out_dim": h,
     "adapter": {"frozen": bool, "W1": M, "b1": M, "W2"?: M, "b2"?: M},
     "classifier": {"class_ids": [...], "n_old": int, "sigma": float,
                    "learn_sigma": bool, "freeze_old": bool, "W": M},
     "mwg": null | {"K": M, "V": M, "a": M, "b": M, "tau": float, "learn_tau": bool}}

where ``M`` is ``{"shape": [...], "data": [row-major floats]}``. Floats are
written at full ``repr`` precision so a save/load round trip is bit-exact. A
detached checkpoint (generator no longer needed) has ``"mwg": null``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import CosineClassifier, FeatureAdapter, ModelState
from .mwg import MwgParams

FORMAT = "lstail-model"
VERSION = 1


def _enc(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": np.ravel(a).tolist()}


def _dec(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def state_to_dict(state: ModelState, mwg: MwgParams | None = None) -> dict:
    ad, clf = state.adapter, state.classifier
    adapter = {"frozen": ad.frozen, "W1": _enc(ad.W1), "b1": _enc(ad.b1)}
    if ad.hidden:
        adapter.update({"W2": _enc(ad.W2), "b2": _enc(ad.b2)})
    mwg_d = None
    if mwg is not None:
        mwg_d = {k: _enc(getattr(mwg, f)) for k, f in (("K", "K"), ("V", "V"), ("a", "a"), ("b", "b_mix"))}
        mwg_d.update({"tau": float(mwg.tau), "learn_tau": mwg.learn_tau})
    return {
        "format": FORMAT,
        "version": VERSION,
        "phase": state.phase,
        "feature_dim": int(ad.W1.shape[1]),
        "out_dim": ad.out_dim,
        "adapter": adapter,
        "classifier": {
            "class_ids": list(clf.class_ids),
            "n_old": clf.n_old,
            "sigma": float(clf.sigma),
            "learn_sigma": clf.learn_sigma,
            "freeze_old": clf.freeze_old,
            "W": _enc(clf.W),
        },
        "mwg": mwg_d,
    }


def state_from_dict(d: dict) -> tuple[ModelState, MwgParams | None]:
    if d.get("format") != FORMAT:
        raise ValueError(f"not a model checkpoint (format={d.get('format')!r})")
    a, c = d["adapter"], d["classifier"]
    adapter = FeatureAdapter(
        _dec(a["W1"]),
        _dec(a["b1"]),
        _dec(a["W2"]) if "W2" in a else None,
        _dec(a["b2"]) if "b2" in a else None,
        frozen=bool(a["frozen"]),
    )
    clf = CosineClassifier(
        _dec(c["W"]),
        np.array(float(c["sigma"])),
        tuple(int(i) for i in c["class_ids"]),
        int(c["n_old"]),
        bool(c["learn_sigma"]),
        bool(c["freeze_old"]),
    )
    mwg = None
    if d.get("mwg") is not None:
        m = d["mwg"]
        mwg = MwgParams(_dec(m["K"]), _dec(m["V"]), _dec(m["a"]), _dec(m["b"]), np.array(float(m["tau"])), bool(m["learn_tau"]))
    return ModelState(adapter, clf, int(d["phase"])), mwg


def save(path: str | Path, state: ModelState, mwg: MwgParams | None = None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(state_to_dict(state, mwg)) + "\n")
    return path


def load(path: str | Path) -> tuple[ModelState, MwgParams | None]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no checkpoint at {path}")
    return state_from_dict(json.loads(path.read_text()))
