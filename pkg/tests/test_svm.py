import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mammo.svm import (KernelParams, SvmModel, SvmParams, decision_value, gram, kkt_report, margin, poly_kernel,
                       primal_objective, slack_values, train_svm)

LINEAR = KernelParams(gamma=1.0, coef_r=0.0, degree=1)


def pair_model(backend=None):
    X = np.array([[1.0], [-1.0]])
    y = np.array([1, 0])
    return train_svm(X, y, SvmParams(c=10.0), LINEAR, backend=backend), X, y


def dual(alpha, Q):
    return alpha.sum(axis=-1) - 0.5 * np.einsum("...i,ij,...j->...", alpha, Q, alpha)


def grid_dual_max(X, ys, k, C, step):
    """Exhaustive grid over the feasible multipliers; the last one is fixed by sum(alpha * y) = 0."""
    Q = np.outer(ys, ys) * gram(X, X, k)
    n = len(ys)

    def search(lo, hi, h):
        grids = np.meshgrid(*[np.clip(np.arange(l, u + h / 2, h), 0, C) for l, u in zip(lo, hi)], indexing="ij")
        free = np.stack([g.ravel() for g in grids], axis=1)
        last = -ys[-1] * (free @ ys[:-1])
        ok = (last >= -1e-12) & (last <= C + 1e-12)
        alpha = np.column_stack([free[ok], np.clip(last[ok], 0, C)])
        vals = dual(alpha, Q)
        i = int(np.argmax(vals))
        return vals[i], alpha[i]

    if n <= 3:
        return search([0.0] * (n - 1), [C] * (n - 1), step)[0]
    # coarse pass, then the requested step around the coarse optimum
    coarse = 20 * step
    _, a = search([0.0] * (n - 1), [C] * (n - 1), coarse)
    return search(a[:-1] - 2 * coarse, a[:-1] + 2 * coarse, step)[0]


# ------------------------------------------------------------------ kernel

def test_kernel_examples():
    assert poly_kernel([1, 2], [3, 4], LINEAR) == 11
    assert poly_kernel([1, 0], [1, 0], KernelParams(1.0, 0.1, 4)) == pytest.approx(1.4641, abs=1e-12)
    with pytest.raises(ValueError):
        poly_kernel([1, 2], [1], LINEAR)
    for bad in (dict(gamma=0), dict(degree=0), dict(degree=1.5)):
        with pytest.raises(ValueError):
            KernelParams(**bad)


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_kernel_symmetry_and_psd(seed):
    rng = np.random.default_rng(seed)
    k = KernelParams(gamma=float(rng.uniform(0.1, 2)), coef_r=float(rng.uniform(0, 1)), degree=int(rng.integers(1, 5)))
    A = rng.random((int(rng.integers(1, 9)), 3))
    assert poly_kernel(A[0], A[-1], k) == pytest.approx(poly_kernel(A[-1], A[0], k))
    G = gram(A, A, k)
    assert np.linalg.eigvalsh(G).min() >= -1e-9
    assert G[0, -1] == pytest.approx(poly_kernel(A[0], A[-1], k))


# ------------------------------------------------------------------ pair oracle

def test_pair_example(backend):
    m, X, y = pair_model(backend)
    np.testing.assert_allclose(m.alphas, [0.5, 0.5], atol=1e-12)
    assert m.b == pytest.approx(0.0, abs=1e-12)
    assert decision_value(m, [0.5]) == pytest.approx(0.5, abs=1e-12)
    assert margin(m) == pytest.approx(1.0, abs=1e-12)
    assert margin(m) * np.sqrt(m.w_norm_sq()) == pytest.approx(1.0, abs=1e-15)
    rep = kkt_report(m, X, y)
    assert rep.max_residual == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(slack_values(m, X, y), 0.0, atol=1e-12)
    # the closed form agrees with the grid oracle
    assert m.dual_objective() == pytest.approx(grid_dual_max(X, np.array([1.0, -1.0]), LINEAR, 10.0, 1e-3), abs=1e-3)


def test_margin_scales_with_inputs():
    X = np.array([[1.0, 0.5], [2.0, 1.5], [-1.0, -0.5], [-1.5, -2.0]])
    y = np.array([1, 1, 0, 0])
    base = margin(train_svm(X, y, SvmParams(c=1e6), LINEAR))
    for s in (0.5, 3.0):
        assert margin(train_svm(s * X, y, SvmParams(c=1e6), LINEAR)) == pytest.approx(s * base, rel=1e-6)


def test_zero_norm_margin_errors():
    m = SvmModel(np.zeros((1, 1)), np.ones(1), np.zeros(1), 0.0, LINEAR, 1.0, np.zeros(1, dtype=np.int64))
    with pytest.raises(ValueError):
        margin(m)


def test_xor_with_quadratic_kernel():
    X = np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]], dtype=float)
    y = np.array([1, 1, 0, 0])
    m = train_svm(X, y, SvmParams(c=10.0), KernelParams(gamma=1.0, coef_r=1.0, degree=2))
    assert (m.predict(X) == y).all()
    np.testing.assert_allclose(slack_values(m, X, y), 0.0, atol=1e-3)


def test_degenerate_labels():
    with pytest.raises(ValueError, match="degenerate labels"):
        train_svm(np.zeros((3, 2)), [1, 1, 1])


# ------------------------------------------------------------------ grid oracle

@pytest.mark.parametrize("seed", range(6))
def test_small_instance_matches_grid(seed, backend):
    rng = np.random.default_rng(seed)
    n = 3 if seed % 2 == 0 else 4
    X = rng.normal(size=(n, 2))
    ys = np.array([1.0, -1.0, 1.0, -1.0][:n])
    if seed % 3 == 0:
        k = LINEAR
    else:
        k = KernelParams(gamma=1.0, coef_r=0.5, degree=2)
    m = train_svm(X, (ys > 0).astype(int), SvmParams(c=1.0, kkt_tolerance=1e-6), k, backend=backend)
    best = grid_dual_max(X, ys, k, 1.0, 1e-3)
    assert m.dual_objective() >= best - 1e-9
    assert m.dual_objective() - best <= 1e-3


# ------------------------------------------------------------------ realistic instance

@pytest.fixture(scope="module")
def noisy():
    rng = np.random.default_rng(7)
    X = rng.random((150, 5))
    y = (X[:, 0] + X[:, 1] ** 2 + 0.25 * rng.standard_normal(150) > 1.0).astype(int)
    return X, y


@pytest.fixture(scope="module")
def noisy_model(noisy):
    X, y = noisy
    return train_svm(X, y, SvmParams(c=10.0, max_passes=1000), KernelParams(1.0, 0.1, 3))


def test_dual_feasibility_and_kkt(noisy, noisy_model):
    X, y = noisy
    m = noisy_model
    assert m.converged
    assert ((m.alphas > 0) & (m.alphas <= m.c)).all()
    rep = kkt_report(m, X, y)
    assert abs(rep.sum_alpha_y) < 1e-8
    assert rep.max_residual <= 1e-3 + 1e-9
    free = (m.alphas > 0) & (m.alphas < m.c)
    yD = m.labels[free] * m.decision_values(m.support_vectors[free])
    np.testing.assert_allclose(yD, 1.0, atol=1e-3 + 1e-9)


def test_trace_non_decreasing(noisy_model):
    tr = noisy_model.trace
    assert len(tr) == noisy_model.updates + 1
    assert np.all(np.diff(tr) >= -1e-9 * np.maximum(1.0, np.abs(tr[1:])))
    assert tr[-1] == pytest.approx(noisy_model.dual_objective(), rel=1e-8)


def test_duality_gap(noisy, noisy_model):
    X, y = noisy
    primal = primal_objective(noisy_model, X, y)
    d = noisy_model.dual_objective()
    assert primal >= d - 1e-9
    assert primal - d <= 1e-3 * (1 + abs(primal))
    s = slack_values(noisy_model, X, y)
    assert (s >= 0).all()
    wrong = noisy_model.predict(X) != y
    assert (s[wrong] >= 1.0).all()


def test_support_vector_order_invariance(noisy, noisy_model):
    X, _ = noisy
    m = noisy_model
    perm = np.random.default_rng(0).permutation(len(m.alphas))
    shuffled = SvmModel(m.support_vectors[perm], m.labels[perm], m.alphas[perm], m.b, m.kernel, m.c,
                        m.support_indices[perm])
    np.testing.assert_allclose(shuffled.decision_values(X), m.decision_values(X), rtol=1e-12, atol=1e-12)


def test_serialization_round_trip(noisy, noisy_model, tmp_path):
    X, _ = noisy
    back = SvmModel.from_dict(json.loads(json.dumps(noisy_model.to_dict())))
    np.testing.assert_allclose(back.decision_values(X), noisy_model.decision_values(X), rtol=0, atol=1e-12)
    noisy_model.save(tmp_path / "s.json")
    np.testing.assert_array_equal(SvmModel.load(tmp_path / "s.json").predict(X), noisy_model.predict(X))
    with pytest.raises(ValueError):
        noisy_model.decision_values(X[:, :3])


def test_non_convergence_is_flagged(noisy, caplog):
    X, y = noisy
    with caplog.at_level(logging.WARNING):
        m = train_svm(X, y, SvmParams(c=10.0, max_passes=1), KernelParams(1.0, 0.1, 4))
    assert not m.converged and m.passes == 1
    assert "without meeting" in caplog.text


def test_deterministic(noisy):
    X, y = noisy
    a = train_svm(X, y, SvmParams(c=1.0))
    b = train_svm(X, y, SvmParams(c=1.0))
    np.testing.assert_array_equal(a.alphas, b.alphas)
    assert a.b == b.b


def test_params_validation():
    for bad in (dict(c=0), dict(kkt_tolerance=0), dict(max_passes=0)):
        with pytest.raises(ValueError):
            SvmParams(**bad)
