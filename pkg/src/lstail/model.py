"""Trainable model: feature adapter -> scaled cosine classifier.

Raw instance features play the role of the frozen backbone output. The
adapter (affine, or affine-tanh-affine) stands in for the RoI head and is the
only trainable representation. Logits are

    y_c = sigma * <w_c / |w_c|, z / |z|>,   z = adapter(x)

with no nonlinearity after the adapter. All gradients are derived by hand;
``tests/test_gradients.py`` checks every one against central differences.

Parameters live in flat dicts of numpy arrays (``"adapter.W1"``,
``"classifier.W"``, ``"classifier.sigma"``, ...). Scalars are 0-d arrays so an
optimizer can update everything in place.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateNormError, ExpansionError, LabelError

Params = dict[str, np.ndarray]


@dataclass
class FeatureAdapter:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray | None = None
    b2: np.ndarray | None = None
    frozen: bool = False

    @classmethod
    def init(cls, d: int, h: int, rng: np.random.Generator, hidden: int | None = None) -> "FeatureAdapter":
        if hidden is None:
            return cls(rng.normal(scale=1 / np.sqrt(d), size=(h, d)), np.zeros(h))
        return cls(
            rng.normal(scale=1 / np.sqrt(d), size=(hidden, d)),
            np.zeros(hidden),
            rng.normal(scale=1 / np.sqrt(hidden), size=(h, hidden)),
            np.zeros(h),
        )

    @classmethod
    def identity(cls, d: int) -> "FeatureAdapter":
        return cls(np.eye(d), np.zeros(d))

    @property
    def hidden(self) -> bool:
        return self.W2 is not None

    @property
    def out_dim(self) -> int:
        return (self.W2 if self.hidden else self.W1).shape[0]

    def params(self) -> Params:
        p = {"adapter.W1": self.W1, "adapter.b1": self.b1}
        if self.hidden:
            p.update({"adapter.W2": self.W2, "adapter.b2": self.b2})
        return p

    def forward(self, X: np.ndarray):
        A = X @ self.W1.T + self.b1
        if not self.hidden:
            return A, (X, None)
        H = np.tanh(A)
        return H @ self.W2.T + self.b2, (X, H)

    def backward(self, dZ: np.ndarray, cache) -> Params:
        X, H = cache
        if self.frozen:
            return {k: np.zeros_like(v) for k, v in self.params().items()}
        if not self.hidden:
            return {"adapter.W1": dZ.T @ X, "adapter.b1": dZ.sum(axis=0)}
        dA = (dZ @ self.W2) * (1.0 - H * H)
        return {
            "adapter.W1": dA.T @ X,
            "adapter.b1": dA.sum(axis=0),
            "adapter.W2": dZ.T @ H,
            "adapter.b2": dZ.sum(axis=0),
        }


@dataclass
class CosineClassifier:
    """Weight matrix ``W`` is (h, n): one column per class, ordered as
    ``class_ids``. The first ``n_old`` columns belong to classes from earlier
    phases."""

    W: np.ndarray
    sigma: np.ndarray
    class_ids: tuple[int, ...]
    n_old: int = 0
    learn_sigma: bool = True
    freeze_old: bool = False

    @property
    def n(self) -> int:
        return self.W.shape[1]

    @property
    def n_new(self) -> int:
        return self.n - self.n_old

    def columns(self) -> dict[int, int]:
        return {c: j for j, c in enumerate(self.class_ids)}

    def params(self) -> Params:
        return {"classifier.W": self.W, "classifier.sigma": self.sigma}


@dataclass
class ModelState:
    adapter: FeatureAdapter
    classifier: CosineClassifier
    phase: int = 0

    def params(self) -> Params:
        return {**self.adapter.params(), **self.classifier.params()}

    def copy(self) -> "ModelState":
        return copy.deepcopy(self)

    @property
    def class_ids(self) -> tuple[int, ...]:
        return self.classifier.class_ids


def init_state(
    feature_dim: int,
    class_ids: Sequence[int],
    rng: np.random.Generator,
    out_dim: int | None = None,
    hidden: int | None = None,
    sigma: float = 10.0,
) -> ModelState:
    h = out_dim or feature_dim
    adapter = FeatureAdapter.init(feature_dim, h, rng, hidden)
    W = rng.normal(scale=1 / np.sqrt(h), size=(h, len(class_ids)))
    return ModelState(adapter, CosineClassifier(W, np.array(float(sigma)), tuple(class_ids)))


# ---------------------------------------------------------------------------
# cosine head


def _unit_rows(Z: np.ndarray, what: str):
    norm = np.linalg.norm(Z, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise DegenerateNormError(f"zero-norm {what}")
    return Z / norm, norm


def cosine_forward(Z: np.ndarray, W: np.ndarray, sigma):
    """Scaled cosine logits for a batch of adapted features ``Z`` (N, h)."""
    Zn, zn = _unit_rows(Z, "adapted feature")
    WnT, wn = _unit_rows(W.T, "weight column")
    C = Zn @ WnT.T
    return float(sigma) * C, (Zn, zn, WnT, wn, C, float(sigma))


def cosine_backward(dY: np.ndarray, cache):
    """Returns (dZ, dW, dsigma)."""
    Zn, zn, WnT, wn, C, sigma = cache
    dsigma = float(np.sum(dY * C))
    dC = sigma * dY
    dZn = dC @ WnT
    dWnT = dC.T @ Zn
    dZ = (dZn - Zn * np.sum(dZn * Zn, axis=1, keepdims=True)) / zn
    dWT = (dWnT - WnT * np.sum(dWnT * WnT, axis=1, keepdims=True)) / wn
    return dZ, dWT.T, dsigma


def forward(state: ModelState, X: np.ndarray):
    Z, acache = state.adapter.forward(np.atleast_2d(X))
    Y, ccache = cosine_forward(Z, state.classifier.W, state.classifier.sigma)
    return Y, (Z, acache, ccache)


def backward(state: ModelState, dY: np.ndarray, cache, dZ_extra: np.ndarray | None = None) -> Params:
    """Chain ``dL/dY`` back to every parameter. ``dZ_extra`` adds gradient that
    reached the adapted features by another route (the weight generator)."""
    Z, acache, ccache = cache
    dZ, dW, dsigma = cosine_backward(dY, ccache)
    if dZ_extra is not None:
        dZ = dZ + dZ_extra
    clf = state.classifier
    if clf.freeze_old and clf.n_old:
        dW[:, : clf.n_old] = 0.0
    grads = state.adapter.backward(dZ, acache)
    grads["classifier.W"] = dW
    grads["classifier.sigma"] = np.array(dsigma if clf.learn_sigma else 0.0)
    return grads


def cosine_logits(state: ModelState, feature: np.ndarray) -> np.ndarray:
    """Logit vector (or matrix, for a batch) over ``state.class_ids``."""
    Y, _ = forward(state, feature)
    return Y[0] if np.ndim(feature) == 1 else Y


def predict(state: ModelState, X: np.ndarray) -> np.ndarray:
    """Predicted class ids (argmax of cosine logits)."""
    Y, _ = forward(state, X)
    return np.asarray(state.class_ids, dtype=np.int64)[np.argmax(Y, axis=1)]


def zero_grads(state: ModelState) -> Params:
    return {k: np.zeros_like(v) for k, v in state.params().items()}


def add_grads(a: Params, b: Params) -> Params:
    out = dict(a)
    for k, v in b.items():
        out[k] = out[k] + v if k in out else v
    return out


# ---------------------------------------------------------------------------
# losses


def label_columns(state: ModelState, labels: np.ndarray) -> np.ndarray:
    cols = state.classifier.columns()
    try:
        return np.fromiter((cols[int(c)] for c in labels), dtype=np.int64, count=len(labels))
    except KeyError as exc:
        raise LabelError(f"label {exc.args[0]} is not a class of this model") from None


def softmax_xent(Y: np.ndarray, cols: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    N = len(Y)
    m = Y.max(axis=1, keepdims=True)
    E = np.exp(Y - m)
    S = E.sum(axis=1, keepdims=True)
    logp = Y - m - np.log(S)
    loss = -float(np.mean(logp[np.arange(N), cols]))
    dY = E / S
    dY[np.arange(N), cols] -= 1.0
    return loss, dY / N


def classification_loss(state: ModelState, X: np.ndarray, labels: np.ndarray) -> tuple[float, Params]:
    """Softmax cross-entropy over cosine logits, averaged over the batch."""
    if len(X) == 0:
        return 0.0, zero_grads(state)
    cols = label_columns(state, labels)
    Y, cache = forward(state, X)
    loss, dY = softmax_xent(Y, cols)
    return loss, backward(state, dY, cache)


def _check_prefix(state_t: ModelState, state_prev: ModelState) -> int:
    n_prev = state_prev.classifier.n
    if state_t.class_ids[:n_prev] != state_prev.class_ids:
        raise ExpansionError("current model's leading columns do not match the previous model's classes")
    return n_prev


def kd_grad(Y_t: np.ndarray, Y_prev: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean L2 distance between the old-class slice of ``Y_t`` and ``Y_prev``,
    and its gradient w.r.t. ``Y_t`` (zero where the distance is zero)."""
    N, n_prev = Y_prev.shape
    D = Y_t[:, :n_prev] - Y_prev
    dist = np.linalg.norm(D, axis=1)
    dY = np.zeros_like(Y_t)
    nz = dist > 0
    dY[nz, :n_prev] = D[nz] / dist[nz, None] / N
    return float(dist.mean()), dY


def distillation_loss(
    state_t: ModelState, state_prev: ModelState, X: np.ndarray, scaled: bool = False
) -> tuple[float, Params]:
    """Mean over ``X`` of ``|| y_prev - y_t[old columns] ||_2``; gradients
    reach ``state_t`` only and there is no temperature.

    By default both logit vectors are taken before the ``sigma`` scaling, i.e.
    plain cosines in [-1, 1]; ``scaled=True`` compares the scaled logits.
    """
    _check_prefix(state_t, state_prev)
    if len(X) == 0:
        return 0.0, zero_grads(state_t)
    Y_prev, _ = forward(state_prev, X)
    Y, cache = forward(state_t, X)
    if scaled:
        loss, dY = kd_grad(Y, Y_prev)
        return loss, backward(state_t, dY, cache)
    s_t, s_prev = float(state_t.classifier.sigma), float(state_prev.classifier.sigma)
    loss, dC = kd_grad(Y / s_t, Y_prev / s_prev)
    grads = backward(state_t, dC / s_t, cache)
    grads["classifier.sigma"] = np.zeros(())
    return loss, grads


def combined_loss(
    state_t: ModelState,
    state_prev: ModelState | None,
    X: np.ndarray,
    labels: np.ndarray,
    X_distill: np.ndarray | None = None,
    scaled_distill: bool = False,
) -> tuple[float, Params]:
    """Classification plus distillation with unit weights."""
    loss, grads = classification_loss(state_t, X, labels)
    if state_prev is None or X_distill is None or len(X_distill) == 0:
        return loss, grads
    kd, kd_grads = distillation_loss(state_t, state_prev, X_distill, scaled_distill)
    return loss + kd, add_grads(grads, kd_grads)


# ---------------------------------------------------------------------------
# expansion


def mean_adapted_features(state: ModelState, X: np.ndarray, labels: np.ndarray, class_ids: Sequence[int]) -> np.ndarray:
    """(h, len(class_ids)) matrix of per-class mean adapted features."""
    Z, _ = state.adapter.forward(X)
    out = np.empty((Z.shape[1], len(class_ids)))
    for j, c in enumerate(class_ids):
        mask = labels == c
        if not mask.any():
            raise LabelError(f"no samples of class {c} to imprint from")
        out[:, j] = Z[mask].mean(axis=0)
    return out


def expand_classifier(
    state: ModelState,
    new_classes: Sequence[int],
    init: str = "random",
    rng: np.random.Generator | None = None,
    X: np.ndarray | None = None,
    labels: np.ndarray | None = None,
    weights: np.ndarray | None = None,
) -> ModelState:
    """Copy of ``state`` with one new column per entry of ``new_classes``.

    ``init`` is ``"random"`` (Gaussian columns of unit expected norm, needs
    ``rng``), ``"imprint"`` (mean adapted feature of the class, needs ``X`` and
    ``labels``) or ``"mwg"`` (columns given in ``weights``). Old columns are
    copied bit for bit and become the ``n_old`` prefix.
    """
    if len(new_classes) < 1:
        raise ExpansionError("need at least one new class")
    clash = set(new_classes) & set(state.class_ids)
    if clash:
        raise ExpansionError(f"classes {sorted(clash)} already have columns")
    h = state.classifier.W.shape[0]
    if init == "random":
        if rng is None:
            raise ExpansionError("random init needs an rng")
        W_new = rng.normal(scale=1 / np.sqrt(h), size=(h, len(new_classes)))
    elif init == "imprint":
        if X is None or labels is None:
            raise ExpansionError("imprint init needs samples")
        W_new = mean_adapted_features(state, X, labels, new_classes)
    elif init == "mwg":
        if weights is None or weights.shape != (h, len(new_classes)):
            raise ExpansionError("mwg init needs an (h, n_new) weight matrix")
        W_new = np.array(weights, dtype=np.float64)
    else:
        raise ExpansionError(f"unknown init rule {init!r}")

    out = state.copy()
    clf = out.classifier
    clf.W = np.concatenate([clf.W, W_new], axis=1)
    clf.n_old = len(clf.class_ids)
    clf.class_ids = tuple(clf.class_ids) + tuple(int(c) for c in new_classes)
    out.phase = state.phase + 1
    return out
