import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import expit

from detsel.mlp import (
    MlpParams,
    PWL_LIMIT,
    TrainOptions,
    TrainingError,
    accuracy,
    bfgs_minimize,
    cost_and_gradient,
    forward,
    forward_op_count,
    init_params,
    n_params,
    sigmoid_pwl,
    train_quasi_newton,
)
from detsel.mlp import _PWL_X


def oracle_forward(params, g):
    """Plain loops over Eqs. for a single input vector."""
    n, P, D = params.sizes
    W1, v1, W2, v2 = params.W1, params.v1, params.W2, params.v2
    hidden = [1 / (1 + np.exp(-(sum(W1[i, j] * g[j] for j in range(n)) + v1[i]))) for i in range(P)]
    logits = [sum(W2[d, j] * hidden[j] for j in range(P)) + v2[d] for d in range(D)]
    e = [np.exp(a - max(logits)) for a in logits]
    return np.array(logits), np.array(e) / sum(e)


def fd_gradient(params, X, y, activation, h=1e-5):
    fd = np.zeros(params.theta.size)
    for i in range(params.theta.size):
        e = np.zeros(params.theta.size)
        e[i] = h
        fp = cost_and_gradient(MlpParams(params.sizes, params.theta + e), X, y, activation)[0]
        fm = cost_and_gradient(MlpParams(params.sizes, params.theta - e), X, y, activation)[0]
        fd[i] = (fp - fm) / (2 * h)
    return fd


def grad_rel_error(g, fd, floor=1e-3):
    return np.max(np.abs(fd - g) / np.maximum(np.maximum(np.abs(fd), np.abs(g)), floor))


def clear_of_kinks(params, X, h=1e-5):
    A = X @ params.W1.T + params.v1
    margin = 2 * h * (1 + np.abs(X).sum(axis=1))[:, None]
    return not np.any(np.min(np.abs(A[..., None] - _PWL_X), axis=-1) < margin)


def test_param_layout_bijection():
    p = init_params((3, 8, 5), seed=3)
    assert n_params((3, 8, 5)) == 77
    q = MlpParams.from_arrays(p.W1, p.v1, p.W2, p.v2)
    assert np.array_equal(p.theta, q.theta)
    with pytest.raises(ValueError):
        MlpParams((3, 8, 5), np.zeros(76))


def test_zero_params_uniform():
    p = MlpParams((3, 8, 5), np.zeros(77))
    out = forward(p, np.array([0.3, -1.0, 2.0]))
    np.testing.assert_allclose(out.probs, 0.2, atol=1e-15)


def test_op_count_3_8_5_network():
    assert forward_op_count((3, 8, 5)) == (64, 77)
    assert forward(init_params(), np.zeros(3)).ops == (64, 77)


def test_forward_matches_loop_oracle(rng):
    for _ in range(20):
        p = MlpParams((3, 8, 5), rng.standard_normal(77))
        g = rng.standard_normal(3)
        logits, probs = oracle_forward(p, g)
        out = forward(p, g)
        np.testing.assert_allclose(out.logits, logits, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(out.probs, probs, rtol=1e-12, atol=1e-12)


@given(arrays(np.float64, (4, 5), elements=st.floats(-500, 500)), st.floats(-300, 300))
def test_softmax_properties(logits, shift):
    p = MlpParams((1, 1, 5), np.concatenate([[0.0], [0.0], np.zeros(5), np.zeros(5)]))
    from detsel.mlp import softmax
    r = softmax(logits)
    assert np.all(r >= 0) and np.all(r <= 1)
    np.testing.assert_allclose(r.sum(axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(softmax(logits + shift), r, atol=1e-12)


def test_cost_perfect_prediction():
    p = MlpParams((1, 1, 3), np.array([0.0, 0.0, 0.0, 0.0, 0.0, 50.0, 0.0, 0.0]))
    c, _ = cost_and_gradient(p, np.zeros((1, 1)), np.array([1]))
    assert c < 1e-6


def test_cost_zero_params(rng):
    p = MlpParams((3, 8, 5), np.zeros(77))
    X = rng.standard_normal((37, 3))
    c, _ = cost_and_gradient(p, X, rng.integers(1, 6, 37))
    assert c == pytest.approx(37 * np.log(5), rel=1e-12)


def test_cost_bad_label(rng):
    p = init_params()
    with pytest.raises(ValueError):
        cost_and_gradient(p, rng.standard_normal((2, 3)), np.array([1, 6]))
    with pytest.raises(ValueError):
        cost_and_gradient(p, rng.standard_normal((2, 3)), np.array([0, 2]))


@pytest.mark.parametrize("activation", ["exact", "pwl"])
def test_gradient_finite_differences(activation, rng):
    checked = 0
    while checked < 10:
        X = rng.standard_normal((40, 3))
        y = rng.integers(1, 6, 40)
        p = MlpParams((3, 8, 5), rng.standard_normal(77))
        if activation == "pwl" and not clear_of_kinks(p, X):
            continue
        checked += 1
        _, g = cost_and_gradient(p, X, y, activation)
        assert grad_rel_error(g, fd_gradient(p, X, y, activation)) < 1e-5


def test_sigmoid_pwl_values():
    assert sigmoid_pwl(0.0) == 0.5
    assert sigmoid_pwl(9.0) == 1.0 and sigmoid_pwl(-9.0) == 0.0
    assert sigmoid_pwl(PWL_LIMIT) == 1.0 and sigmoid_pwl(-PWL_LIMIT) == 0.0
    x = np.arange(-8000, 8001) * 1e-3
    assert np.max(np.abs(sigmoid_pwl(x) - expit(x))) <= 0.02


def test_sigmoid_pwl_continuous():
    eps = 1e-9
    for k in _PWL_X:
        assert abs(sigmoid_pwl(k + eps) - sigmoid_pwl(k - eps)) < 1e-8


def test_bfgs_quadratic():
    rng = np.random.default_rng(7)
    k = 12
    A = rng.standard_normal((k, k))
    Q = A @ A.T + k * np.eye(k)
    b = rng.standard_normal(k)
    xstar = np.linalg.solve(Q, b)
    res = bfgs_minimize(lambda x: (0.5 * x @ Q @ x - b @ x, Q @ x - b), np.zeros(k), gtol=1e-7)
    assert res.converged
    assert res.iterations <= 2 * k
    assert np.max(np.abs(res.x - xstar)) < 1e-8
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))


def test_bfgs_nan_aborts():
    with pytest.raises(TrainingError):
        bfgs_minimize(lambda x: (float("nan"), x), np.ones(2))


def test_bfgs_line_search_failure_recorded():
    # gradient that lies about the descent direction forces the fallback
    def f(x):
        return float(x @ x), -2 * x
    res = bfgs_minimize(f, np.ones(3), max_iter=3)
    assert res.events
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))


def _clusters(rng, n=600):
    centers = np.array([[3, 0, 0], [-3, 0, 0], [0, 3, 3]])
    y = rng.integers(1, 4, n)
    return centers[y - 1] + 0.5 * rng.standard_normal((n, 3)), y


def test_train_separable_three_classes(rng):
    X, y = _clusters(rng)
    params, res = train_quasi_newton(X, y, TrainOptions(n_classes=3, max_iter=300))
    assert accuracy(params, X, y) == 1.0
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))


def test_train_deterministic(rng):
    X, y = _clusters(rng, 300)
    a, _ = train_quasi_newton(X, y, TrainOptions(n_classes=3, max_iter=50, seed=4))
    b, _ = train_quasi_newton(X, y, TrainOptions(n_classes=3, max_iter=50, seed=4))
    assert np.array_equal(a.theta, b.theta)


def test_train_pwl_mode_runs(rng):
    X, y = _clusters(rng, 300)
    params, res = train_quasi_newton(X, y, TrainOptions(n_classes=3, max_iter=100, activation="pwl"))
    assert accuracy(params, X, y, "pwl") > 0.95
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))
