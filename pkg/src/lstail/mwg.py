"""Meta weight generator: writes classifier columns for new classes from their
support features and an attention read over the base-class weights.

For one adapted feature ``z``::

    m = softmax_j( cos(K_j, V z) / tau )        # attention over b base classes
    w = a * z + b_mix * (W_B @ m)               # element-wise mixing

and a class's column is the mean of ``w`` over its support features.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import CoverageError, ExpansionError, SupportError
from .model import ModelState, Params, _check_prefix, _unit_rows, add_grads, cosine_backward, cosine_forward, kd_grad, label_columns, softmax_xent


@dataclass
class MwgParams:
    K: np.ndarray  # (b, h): one key per base class
    V: np.ndarray  # (h, h)
    a: np.ndarray  # (h,)
    b_mix: np.ndarray  # (h,)
    tau: np.ndarray  # 0-d, positive
    learn_tau: bool = True

    @classmethod
    def init(cls, W_base: np.ndarray, tau: float = 0.1, b_mix: float = 0.0) -> "MwgParams":
        """Keys start as the base weight columns and ``V`` as the identity, so the
        attention initially scores a feature by its cosine to each base column.
        ``a = 1`` and ``b_mix = 0`` make the initial generator pure imprinting."""
        h, b = W_base.shape
        return cls(
            K=np.ascontiguousarray(W_base.T, dtype=np.float64),
            V=np.eye(h),
            a=np.ones(h),
            b_mix=np.full(h, float(b_mix)),
            tau=np.array(float(tau)),
        )

    @property
    def num_base(self) -> int:
        return self.K.shape[0]

    def params(self) -> Params:
        return {"mwg.K": self.K, "mwg.V": self.V, "mwg.a": self.a, "mwg.b": self.b_mix, "mwg.tau": self.tau}

    def to_dict(self) -> dict:
        return {
            "K": self.K.tolist(),
            "V": self.V.tolist(),
            "a": self.a.tolist(),
            "b": self.b_mix.tolist(),
            "tau": float(self.tau),
            "learn_tau": self.learn_tau,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MwgParams":
        return cls(
            np.asarray(d["K"], dtype=np.float64),
            np.asarray(d["V"], dtype=np.float64),
            np.asarray(d["a"], dtype=np.float64),
            np.asarray(d["b"], dtype=np.float64),
            np.array(float(d["tau"])),
            bool(d.get("learn_tau", True)),
        )


def _attention(params: MwgParams, Z: np.ndarray):
    Q = Z @ params.V.T
    Qn, qn = _unit_rows(Q, "query V x")
    Kn, kn = _unit_rows(params.K, "key")
    tau = float(params.tau)
    S = Qn @ Kn.T
    E = S / tau
    E = E - E.max(axis=1, keepdims=True)
    M = np.exp(E)
    M /= M.sum(axis=1, keepdims=True)
    return M, (Z, Qn, qn, Kn, kn, S, tau, M)


def attention_coeffs(params: MwgParams, x: np.ndarray) -> np.ndarray:
    """Attention weights over base classes for an adapted feature (or a batch)."""
    M, _ = _attention(params, np.atleast_2d(x))
    return M[0] if np.ndim(x) == 1 else M


def generate_forward(params: MwgParams, W_base: np.ndarray, Z: np.ndarray):
    """Per-feature generated weights, (N, h)."""
    if W_base.shape[1] != params.num_base:
        raise ExpansionError(f"W_base has {W_base.shape[1]} columns, generator expects {params.num_base}")
    M, acache = _attention(params, Z)
    G = M @ W_base.T
    return params.a * Z + params.b_mix * G, (acache, G, W_base)


def generate_backward(params: MwgParams, dWgen: np.ndarray, cache) -> tuple[Params, np.ndarray, np.ndarray]:
    """Returns (generator grads, dW_base, dZ)."""
    (Z, Qn, qn, Kn, kn, S, tau, M), G, W_base = cache
    da = np.sum(dWgen * Z, axis=0)
    db = np.sum(dWgen * G, axis=0)
    dG = dWgen * params.b_mix
    dW_base = dG.T @ M
    dM = dG @ W_base
    dE = M * (dM - np.sum(dM * M, axis=1, keepdims=True))
    dtau = -float(np.sum(dE * S)) / tau**2
    dS = dE / tau
    dQn = dS @ Kn
    dKn = dS.T @ Qn
    dQ = (dQn - Qn * np.sum(dQn * Qn, axis=1, keepdims=True)) / qn
    dK = (dKn - Kn * np.sum(dKn * Kn, axis=1, keepdims=True)) / kn
    grads = {
        "mwg.K": dK,
        "mwg.V": dQ.T @ Z,
        "mwg.a": da,
        "mwg.b": db,
        "mwg.tau": np.array(dtau if params.learn_tau else 0.0),
    }
    dZ = dWgen * params.a + dQ @ params.V
    return grads, dW_base, dZ


def generate_weight(params: MwgParams, W_base: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Column for one class: mean generated weight over its adapted support features."""
    support = np.atleast_2d(support)
    if support.shape[0] == 0:
        raise SupportError("empty support set")
    Wgen, _ = generate_forward(params, W_base, support)
    return Wgen.mean(axis=0)


@dataclass
class Episode:
    """Raw (un-adapted) features. ``support`` maps each new class to its
    support rows; the query is labelled over old and new classes."""

    support: dict[int, np.ndarray]
    query_X: np.ndarray
    query_y: np.ndarray
    distill_X: np.ndarray | None = None


def run_episode(
    state: ModelState,
    params: MwgParams,
    episode: Episode,
    state_prev: ModelState | None = None,
    scaled_distill: bool = False,
) -> tuple[float, Params]:
    """Generate the new columns from the support set, classify the query with
    the concatenated classifier and return the combined loss with gradients for
    the model and the generator.

    ``state`` must already hold columns for the new classes (their values are
    ignored and receive zero gradient).
    """
    clf = state.classifier
    n_old, b = clf.n_old, params.num_base
    if b > n_old:
        raise ExpansionError("generator has more keys than the model has old columns")
    new_ids = clf.class_ids[n_old:]
    for c in new_ids:
        if c not in episode.support or len(episode.support[c]) == 0:
            raise SupportError(f"new class {c} has no support samples")

    sup_X = np.concatenate([np.atleast_2d(episode.support[c]) for c in new_ids])
    sizes = np.array([len(np.atleast_2d(episode.support[c])) for c in new_ids])
    owner = np.repeat(np.arange(len(new_ids)), sizes)

    Zs, s_cache = state.adapter.forward(sup_X)
    W_base = clf.W[:, :b]
    Wgen, g_cache = generate_forward(params, W_base, Zs)
    W_new = np.zeros((Wgen.shape[1], len(new_ids)))
    np.add.at(W_new.T, owner, Wgen)
    W_new /= sizes
    W_full = np.concatenate([clf.W[:, :n_old], W_new], axis=1)

    dW_full = np.zeros_like(W_full)
    sigma_grad = 0.0
    adapter_grads: Params = {}
    loss = 0.0
    if len(episode.query_X):
        cols = label_columns(state, episode.query_y)
        Zq, q_cache = state.adapter.forward(episode.query_X)
        Y, c_cache = cosine_forward(Zq, W_full, clf.sigma)
        loss, dY = softmax_xent(Y, cols)
        dZq, dW, ds = cosine_backward(dY, c_cache)
        dW_full += dW
        sigma_grad += ds
        adapter_grads = add_grads(adapter_grads, state.adapter.backward(dZq, q_cache))

    if state_prev is not None and episode.distill_X is not None and len(episode.distill_X):
        n_prev = _check_prefix(state, state_prev)
        Zp, _ = state_prev.adapter.forward(episode.distill_X)
        Y_prev, _ = cosine_forward(Zp, state_prev.classifier.W, state_prev.classifier.sigma)
        Zd, d_cache = state.adapter.forward(episode.distill_X)
        Yd, c_cache = cosine_forward(Zd, clf.W[:, :n_prev], clf.sigma)
        if scaled_distill:
            kd, dYd = kd_grad(Yd, Y_prev)
        else:
            s_t, s_prev = float(clf.sigma), float(state_prev.classifier.sigma)
            kd, dC = kd_grad(Yd / s_t, Y_prev / s_prev)
            dYd = dC / s_t
        loss += kd
        dZd, dW, ds = cosine_backward(dYd, c_cache)
        dW_full[:, :n_prev] += dW
        if scaled_distill:
            sigma_grad += ds
        adapter_grads = add_grads(adapter_grads, state.adapter.backward(dZd, d_cache))

    dWgen = (dW_full[:, n_old:] / sizes)[:, owner].T
    gen_grads, dW_base, dZs = generate_backward(params, dWgen, g_cache)
    adapter_grads = add_grads(adapter_grads, state.adapter.backward(dZs, s_cache))

    dW_model = np.zeros_like(clf.W)
    dW_model[:, :n_old] = dW_full[:, :n_old]
    dW_model[:, :b] += dW_base
    if clf.freeze_old:
        dW_model[:, :n_old] = 0.0
    grads = {**adapter_grads, **gen_grads}
    grads["classifier.W"] = dW_model
    grads["classifier.sigma"] = np.array(sigma_grad if clf.learn_sigma else 0.0)
    return loss, grads


def finalize_weights(state: ModelState, params: MwgParams, X: np.ndarray, labels: np.ndarray) -> ModelState:
    """Copy of ``state`` whose new-class columns are the mean generated weight
    over every instance of that class in ``(X, labels)``. The result needs no
    generator at inference time."""
    clf = state.classifier
    out = state.copy()
    W_base = clf.W[:, : params.num_base]
    for j in range(clf.n_old, clf.n):
        c = clf.class_ids[j]
        mask = labels == c
        if not mask.any():
            raise CoverageError(f"new class {c} has no instances to finalize from")
        Z, _ = state.adapter.forward(X[mask])
        out.classifier.W[:, j] = generate_weight(params, W_base, Z)
    return out


def generate_columns(state: ModelState, params: MwgParams, support: Mapping[int, np.ndarray], class_ids: Sequence[int]) -> np.ndarray:
    """(h, len(class_ids)) generated columns from raw support features."""
    W_base = state.classifier.W[:, : params.num_base]
    cols = []
    for c in class_ids:
        sup = np.atleast_2d(support.get(c, np.empty((0, state.adapter.W1.shape[1]))))
        if len(sup) == 0:
            raise SupportError(f"class {c} has no support samples")
        Z, _ = state.adapter.forward(sup)
        cols.append(generate_weight(params, W_base, Z))
    return np.stack(cols, axis=1)
