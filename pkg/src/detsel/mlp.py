"""Three-layer perceptron (inputs -> sigmoid hidden layer -> softmax) and its
full-batch BFGS trainer.

Parameter vector layout: W1 (P x n_in, row major), v1 (P), W2 (D x P), v2 (D).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import line_search
from scipy.optimize._linesearch import LineSearchWarning
from scipy.special import expit

log = logging.getLogger(__name__)

ACTIVATIONS = ("exact", "pwl")

# piecewise-linear sigmoid: 16 uniform segments per side on [-8, 8]
PWL_LIMIT = 8.0
PWL_SEGMENTS = 16
_PWL_X = np.linspace(-PWL_LIMIT, PWL_LIMIT, 2 * PWL_SEGMENTS + 1)
_PWL_Y = expit(_PWL_X)
_PWL_Y[0], _PWL_Y[-1] = 0.0, 1.0  # continuous hand-off to saturation
_PWL_SLOPE = np.diff(_PWL_Y) / np.diff(_PWL_X)


def sigmoid_pwl(x):
    """Continuous piecewise-linear sigmoid, exact at 0, saturated beyond +-8."""
    return np.interp(x, _PWL_X, _PWL_Y)


def sigmoid_pwl_slope(x):
    """Piecewise-constant derivative of :func:`sigmoid_pwl` (0 when saturated)."""
    x = np.asarray(x, dtype=float)
    k = np.searchsorted(_PWL_X, x, side="right") - 1
    inside = (k >= 0) & (k < len(_PWL_SLOPE))
    return np.where(inside, _PWL_SLOPE[np.clip(k, 0, len(_PWL_SLOPE) - 1)], 0.0)


def _activate(a, activation: str):
    if activation == "exact":
        h = expit(a)
        return h, h * (1.0 - h)
    if activation == "pwl":
        return sigmoid_pwl(a), sigmoid_pwl_slope(a)
    raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


@dataclass
class MlpParams:
    sizes: tuple  # (n_in, P, D)
    theta: np.ndarray

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (n_params(self.sizes),):
            raise ValueError(f"theta has {self.theta.size} entries, sizes {self.sizes} need {n_params(self.sizes)}")

    @property
    def W1(self):
        n, P, _ = self.sizes
        return self.theta[: P * n].reshape(P, n)

    @property
    def v1(self):
        n, P, _ = self.sizes
        return self.theta[P * n: P * n + P]

    @property
    def W2(self):
        n, P, D = self.sizes
        o = P * n + P
        return self.theta[o: o + D * P].reshape(D, P)

    @property
    def v2(self):
        n, P, D = self.sizes
        return self.theta[n_params(self.sizes) - D:]

    @classmethod
    def from_arrays(cls, W1, v1, W2, v2) -> "MlpParams":
        W1, W2 = np.asarray(W1, float), np.asarray(W2, float)
        sizes = (W1.shape[1], W1.shape[0], W2.shape[0])
        theta = np.concatenate([W1.ravel(), np.ravel(v1), W2.ravel(), np.ravel(v2)])
        return cls(sizes, theta)


def n_params(sizes) -> int:
    n, P, D = sizes
    return P * n + P + D * P + D


def init_params(sizes=(3, 8, 5), seed=0) -> MlpParams:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)), zero biases."""
    n, P, D = sizes
    rng = np.random.default_rng(seed)
    a1 = np.sqrt(6.0 / (n + P))
    a2 = np.sqrt(6.0 / (P + D))
    return MlpParams.from_arrays(rng.uniform(-a1, a1, (P, n)), np.zeros(P),
                                 rng.uniform(-a2, a2, (D, P)), np.zeros(D))


class OpCount(NamedTuple):
    mults: int
    adds: int


def forward_op_count(sizes) -> OpCount:
    """Real operations of the two affine maps for one input vector.

    Every node accumulates fan_in products and its bias into a zero-initialized
    accumulator, i.e. fan_in + 1 additions. Activation and softmax are not counted.
    """
    n, P, D = sizes
    return OpCount(mults=n * P + P * D, adds=P * (n + 1) + D * (P + 1))


class ForwardResult(NamedTuple):
    logits: np.ndarray
    probs: np.ndarray
    ops: OpCount


def softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def forward(params: MlpParams, g, activation: str = "exact") -> ForwardResult:
    g = np.asarray(g, dtype=float)
    h, _ = _activate(g @ params.W1.T + params.v1, activation)
    logits = h @ params.W2.T + params.v2
    return ForwardResult(logits, softmax(logits), forward_op_count(params.sizes))


def cost_and_gradient(params: MlpParams, X, labels, activation: str = "exact"):
    """Cross-entropy c = -sum_n log r_{z_n, n} and its gradient w.r.t. theta.

    ``labels`` are class indices 1..D.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    n, P, D = params.sizes
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if np.any(labels < 1) or np.any(labels > D):
        raise ValueError(f"labels must lie in 1..{D}")
    idx = labels.astype(np.int64) - 1
    h, dh = _activate(X @ params.W1.T + params.v1, activation)
    logits = h @ params.W2.T + params.v2
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(idx))
    c = float(np.sum(lse - shifted[rows, idx]))

    delta = np.exp(shifted - lse[:, None])
    delta[rows, idx] -= 1.0
    gW2 = delta.T @ h
    gv2 = delta.sum(axis=0)
    d1 = (delta @ params.W2) * dh
    gW1 = d1.T @ X
    gv1 = d1.sum(axis=0)
    return c, np.concatenate([gW1.ravel(), gv1, gW2.ravel(), gv2])


# ----------------------------------------------------------------------------
# Optimization


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainOptions:
    hidden: int = 8
    n_classes: int = 5
    max_iter: int = 500
    gtol: float = 1e-5
    c1: float = 1e-4
    c2: float = 0.9
    seed: int = 0
    activation: str = "exact"

    def __post_init__(self):
        if self.gtol <= 0 or not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need gtol > 0 and 0 < c1 < c2 < 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class OptimizeResult:
    x: np.ndarray
    trace: list = field(default_factory=list)   # objective after each accepted step, trace[0] = start
    grad_norm: float = np.inf
    converged: bool = False
    events: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.trace) - 1


def bfgs_minimize(fun: Callable, x0, max_iter: int = 500, gtol: float = 1e-5,
                  c1: float = 1e-4, c2: float = 0.9) -> OptimizeResult:
    """Dense-inverse-Hessian BFGS with a strong-Wolfe line search.

    ``fun(x)`` returns (value, gradient). When the line search fails the
    iteration falls back to a backtracking steepest-descent step and the
    inverse Hessian is reset; the event is recorded in ``events``.
    """
    cache: dict = {}

    def fg(x):
        key = x.tobytes()
        if key not in cache:
            if len(cache) > 64:
                cache.clear()
            f, g = fun(x)
            if not np.isfinite(f) or not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite objective {f!r} at |x|={np.linalg.norm(x):.3g}")
            cache[key] = (float(f), np.asarray(g, dtype=float))
        return cache[key]

    x = np.array(x0, dtype=float)
    k = x.size
    f, g = fg(x)
    res = OptimizeResult(x=x, trace=[f])
    Hinv = np.eye(k)
    first = True
    f_old = None
    for it in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm < gtol:
            res.converged = True
            break
        p = -Hinv @ g
        if g @ p >= 0:
            Hinv = np.eye(k)
            p = -g
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LineSearchWarning)
            alpha, *_ = line_search(lambda z: fg(z)[0], lambda z: fg(z)[1], x, p, g, f, f_old,
                                    c1=c1, c2=c2, maxiter=30)
        if alpha is None or fg(x + alpha * p)[0] >= f:
            res.events.append(f"iter {it}: line search failed, steepest-descent fallback")
            log.debug(res.events[-1])
            p = -g
            alpha = 1.0 / max(gnorm, 1.0)
            while alpha > 1e-20 and fg(x + alpha * p)[0] >= f:
                alpha *= 0.5
            if alpha <= 1e-20:
                res.events.append(f"iter {it}: no descent possible, stopping")
                break
            Hinv = np.eye(k)
            first = True
        x_new = x + alpha * p
        f_new, g_new = fg(x_new)
        s = x_new - x
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if first:
                Hinv = np.eye(k) * (sy / float(yv @ yv))
                first = False
            rho = 1.0 / sy
            Hy = Hinv @ yv
            Hinv = (Hinv - rho * (np.outer(s, Hy) + np.outer(Hy, s))
                    + (rho * rho * float(yv @ Hy) + rho) * np.outer(s, s))
        f_old, f = f, f_new
        x, g = x_new, g_new
        res.trace.append(f)
    res.x = x
    res.grad_norm = float(np.linalg.norm(g))
    return res


def train_quasi_newton(X, labels, opts: TrainOptions | None = None,
                       init: MlpParams | None = None):
    """Fit the perceptron by full-batch BFGS on the summed cross-entropy.

    ``X`` holds standardized inputs (N, n_in). Returns (params, OptimizeResult).
    """
    opts = opts or TrainOptions()
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    sizes = (X.shape[1], opts.hidden, opts.n_classes)
    params = init if init is not None else init_params(sizes, opts.seed)
    if params.sizes != sizes:
        raise ValueError(f"initial parameters have sizes {params.sizes}, expected {sizes}")

    def objective(theta):
        return cost_and_gradient(MlpParams(sizes, theta), X, labels, opts.activation)

    res = bfgs_minimize(objective, params.theta, opts.max_iter, opts.gtol, opts.c1, opts.c2)
    log.info("BFGS: %d iterations, cost %.6g -> %.6g, |g| = %.3g",
             res.iterations, res.trace[0], res.trace[-1], res.grad_norm)
    return MlpParams(sizes, res.x), res


def accuracy(params: MlpParams, X, labels, activation: str = "exact") -> float:
    pred = np.argmax(forward(params, X, activation).probs, axis=1) + 1
    return float(np.mean(pred == np.asarray(labels)))
