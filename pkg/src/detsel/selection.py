"""Detector choice from perceptron outputs, margin calibration and relabeling.

Boundary conventions: r_{D+1} = 0 and delta_D = 0, so the reliable rule is
total and always terminates at D at the latest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mlp import MlpParams, TrainOptions, forward, train_quasi_newton


@dataclass
class Margins:
    delta: np.ndarray          # delta_1 .. delta_{D-1}
    gamma: float = 0.01
    step: float = 0.001

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        if np.any(self.delta < 0) or np.any(self.delta > 1):
            raise ValueError("margins must lie in [0, 1]")

    def full(self) -> np.ndarray:
        """delta_1 .. delta_D with the implicit delta_D = 0."""
        return np.append(self.delta, 0.0)


def select_argmax(r) -> np.ndarray:
    """Smallest index (1-based) attaining the maximum probability."""
    return np.argmax(np.asarray(r), axis=-1) + 1


def _first_reliable(r, start, delta_full) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    D = r.shape[-1]
    gap = r - np.concatenate([r[..., 1:], np.zeros(r.shape[:-1] + (1,))], axis=-1)
    d = np.arange(1, D + 1)
    ok = (gap > delta_full) & (d >= np.asarray(start)[..., None])
    ok[..., -1] = True  # fall through to D
    return np.argmax(ok, axis=-1) + 1


def select_reliable(r, margins: Margins) -> np.ndarray:
    """Smallest d >= argmax(r) with r_d - r_{d+1} > delta_d."""
    return _first_reliable(r, select_argmax(r), margins.full())


def relabel(r, z, margins: Margins) -> np.ndarray:
    """New labels: smallest d >= z_n with r_{d,n} - r_{d+1,n} > delta_d."""
    return _first_reliable(r, z, margins.full())


@dataclass
class CalibrationRow:
    d: int
    delta: float
    under_rate: float       # Pr(r_d - r_{d+1} > delta ; z = d+1), normalized by N
    correct_prob: float     # Pr(r_d - r_{d+1} > delta | z = d)


def underestimation_rate(r, z, d: int, delta: float) -> float:
    r = np.asarray(r)
    z = np.asarray(z)
    gap = r[:, d - 1] - r[:, d]
    return float(np.sum((gap > delta) & (z == d + 1)) / len(z))


def correct_probability(r, z, d: int, delta: float) -> float:
    r = np.asarray(r)
    z = np.asarray(z)
    n_d = np.sum(z == d)
    if n_d == 0:
        return 0.0
    gap = r[:, d - 1] - r[:, d]
    return float(np.sum((gap > delta) & (z == d)) / n_d)


def calibrate_margins(r, z, gamma: float = 0.01, step: float = 0.001):
    """Per d, the smallest grid value delta in {0, step, ..., 1} whose
    under-estimation rate is below gamma.

    Both estimated probabilities are non-increasing in delta, so the smallest
    feasible delta also maximizes the correct-estimation probability.
    Returns (Margins, list of CalibrationRow).
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    r = np.asarray(r, dtype=float)
    z = np.asarray(z)
    N, D = r.shape
    n_steps = int(round(1.0 / step))
    grid = np.arange(n_steps + 1) * step
    grid[-1] = 1.0
    deltas, rows = [], []
    for d in range(1, D):
        gap = np.sort(r[z == d + 1, d - 1] - r[z == d + 1, d])
        above = len(gap) - np.searchsorted(gap, grid, side="right")
        feasible = above / N < gamma
        delta = float(grid[np.argmax(feasible)])
        deltas.append(delta)
        rows.append(CalibrationRow(d, delta, underestimation_rate(r, z, d, delta),
                                   correct_probability(r, z, d, delta)))
    return Margins(np.array(deltas), gamma, step), rows


def retrain(X, z, params: MlpParams, margins: Margins, opts: TrainOptions | None = None,
            warm_start: bool = True):
    """Relabel with (params, margins) and train again.

    Returns (new params, OptimizeResult, new labels). With ``warm_start`` the
    optimizer starts from ``params``; otherwise from a fresh seeded init.
    """
    opts = opts or TrainOptions(hidden=params.sizes[1], n_classes=params.sizes[2])
    r = forward(params, X, opts.activation).probs
    zeta = relabel(r, z, margins)
    new, res = train_quasi_newton(X, zeta, opts, init=params if warm_start else None)
    return new, res, zeta
