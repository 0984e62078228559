from __future__ import annotations

import math

import numpy as np
import pytest

from lstail.errors import CoverageError, ExpansionError, SupportError
from lstail.model import FeatureAdapter, expand_classifier, init_state
from lstail.mwg import (
    Episode,
    MwgParams,
    attention_coeffs,
    finalize_weights,
    generate_columns,
    generate_weight,
    run_episode,
)


def weight_oracle(K, V, a, b, tau, W_base, support):
    """Element-wise loops, no numpy linear algebra."""
    h, nb = len(a), len(K)
    acc = [0.0] * h
    for x in support:
        q = [sum(V[i][j] * x[j] for j in range(h)) for i in range(h)]
        qn = math.sqrt(sum(v * v for v in q))
        s = []
        for k in K:
            kn = math.sqrt(sum(v * v for v in k))
            s.append(sum(q[i] * k[i] for i in range(h)) / (qn * kn) / tau)
        mx = max(s)
        e = [math.exp(v - mx) for v in s]
        m = [v / sum(e) for v in e]
        for i in range(h):
            acc[i] += a[i] * x[i] + b[i] * sum(W_base[i][j] * m[j] for j in range(nb))
    return [v / len(support) for v in acc]


def random_params(rng, h=4, nb=3):
    W_base = rng.normal(size=(h, nb))
    p = MwgParams(rng.normal(size=(nb, h)), rng.normal(size=(h, h)), rng.normal(size=h), rng.normal(size=h), np.array(0.4))
    return p, W_base


def test_general_generation_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p, W_base = random_params(rng)
        sup = rng.normal(size=(int(rng.integers(1, 6)), 4))
        want = weight_oracle(p.K.tolist(), p.V.tolist(), p.a.tolist(), p.b_mix.tolist(), 0.4, W_base.tolist(), sup.tolist())
        np.testing.assert_allclose(generate_weight(p, W_base, sup), want, rtol=0, atol=1e-12)


def test_pure_imprint_is_exact():
    rng = np.random.default_rng(1)
    W_base = rng.normal(size=(4, 3))
    p = MwgParams.init(W_base)
    assert p.a.tolist() == [1.0] * 4 and p.b_mix.tolist() == [0.0] * 4
    sup = rng.normal(size=(5, 4))
    assert np.array_equal(generate_weight(p, W_base, sup), sup.mean(axis=0))


def test_pure_base_copy_is_exact():
    rng = np.random.default_rng(2)
    W_base = rng.normal(size=(4, 3))
    p = MwgParams.init(W_base, tau=1e-6)
    p.a[:] = 0.0
    p.b_mix[:] = 1.0
    for j in range(3):
        # a support pointing at base column j puts all attention on it
        sup = np.stack([W_base[:, j] * 2.0, W_base[:, j] * 0.5])
        assert attention_coeffs(p, sup[0]).tolist() == [float(i == j) for i in range(3)]
        assert np.array_equal(generate_weight(p, W_base, sup), W_base[:, j])


def test_attention_is_a_distribution():
    p, _ = random_params(np.random.default_rng(3))
    m = attention_coeffs(p, np.random.default_rng(4).normal(size=(7, 4)))
    assert m.shape == (7, 3) and np.all(m >= 0)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, rtol=1e-14)


def test_empty_support_and_wrong_base():
    p, W_base = random_params(np.random.default_rng(5))
    with pytest.raises(SupportError):
        generate_weight(p, W_base, np.empty((0, 4)))
    with pytest.raises(ExpansionError):
        generate_weight(p, W_base[:, :2], np.ones((1, 4)))


def episode_setup(seed=0):
    rng = np.random.default_rng(seed)
    prev = init_state(4, [0, 1, 2], rng, sigma=5.0)
    p = MwgParams.init(prev.classifier.W, tau=0.3, b_mix=0.5)
    state = expand_classifier(prev, [3, 4], "random", rng=rng)
    support = {3: rng.normal(size=(1, 4)), 4: rng.normal(size=(2, 4))}
    ep = Episode(support, rng.normal(size=(6, 4)), np.array([0, 1, 2, 3, 4, 3]), rng.normal(size=(3, 4)))
    return prev, state, p, ep


def test_one_shot_episode_deterministic():
    prev, state, p, ep = episode_setup()
    l1, g1 = run_episode(state, p, ep, prev)
    l2, g2 = run_episode(state, p, ep, prev)
    assert np.isfinite(l1) and l1 == l2
    assert all(np.array_equal(g1[k], g2[k]) for k in g1)
    assert not np.any(g1["classifier.W"][:, 3:])  # placeholder columns are not used


def test_episode_ignores_placeholder_columns():
    prev, state, p, ep = episode_setup(1)
    l1, _ = run_episode(state, p, ep, prev)
    state.classifier.W[:, 3:] = 123.0
    assert run_episode(state, p, ep, prev)[0] == l1


def test_episode_requires_support_per_new_class():
    prev, state, p, ep = episode_setup(2)
    del ep.support[4]
    with pytest.raises(SupportError):
        run_episode(state, p, ep, prev)


def test_finalize_uses_every_instance():
    prev, state, p, _ = episode_setup(3)
    rng = np.random.default_rng(9)
    X = rng.normal(size=(6, 4))
    y = np.array([3, 4, 4, 0, 3, 3])
    out = finalize_weights(state, p, X, y)
    Z, _ = state.adapter.forward(X)
    W_base = state.classifier.W[:, :3]
    np.testing.assert_array_equal(out.classifier.W[:, 3], generate_weight(p, W_base, Z[y == 3]))
    np.testing.assert_array_equal(out.classifier.W[:, :3], state.classifier.W[:, :3])
    cols = generate_columns(state, p, {3: X[y == 3], 4: X[y == 4]}, [3, 4])
    np.testing.assert_allclose(out.classifier.W[:, 3:], cols, rtol=1e-15)
    with pytest.raises(CoverageError):
        finalize_weights(state, p, X[y != 4], y[y != 4])


def test_params_dict_round_trip():
    p, _ = random_params(np.random.default_rng(6))
    q = MwgParams.from_dict(p.to_dict())
    for k in p.params():
        assert np.array_equal(p.params()[k], q.params()[k])


def test_identity_adapter_generation_equals_raw_support():
    rng = np.random.default_rng(7)
    s = init_state(3, [0, 1], rng)
    s.adapter = FeatureAdapter.identity(3)
    p = MwgParams.init(s.classifier.W)
    sup = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(generate_columns(s, p, {5: sup}, [5])[:, 0], sup.mean(axis=0))
