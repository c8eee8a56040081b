"""Offline training pipeline: rank, preprocess, train, calibrate, retrain.

Each stage stores what it needs to rebuild the processed training set in the
model metadata, so later stages are reproducible from (dataset, model) alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .features import FEATURE_NAMES, Dataset, mifs_rank, resample_and_merge, standardize
from .mlp import TrainOptions, accuracy, forward, train_quasi_newton
from .model import Model
from .selection import calibrate_margins, retrain, underestimation_rate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    top_k: int = 3
    n_max: int = 20_000
    merge_from: int = 3  # 0 disables merging (labels are never 0)
    merge_to: int = 4
    holdout: float = 0.1
    log_features: bool = True
    seed: int = 0
    hidden: int = 8
    max_iter: int = 500
    gtol: float = 1e-5
    activation: str = "exact"
    gamma: float = 0.01
    margin_step: float = 0.001

    def __post_init__(self):
        if not 1 <= self.top_k <= len(FEATURE_NAMES):
            raise ValueError(f"top_k must be in 1..{len(FEATURE_NAMES)}")
        if not 0 <= self.holdout < 1:
            raise ValueError("holdout must lie in [0, 1)")

    def train_options(self) -> TrainOptions:
        return TrainOptions(hidden=self.hidden, max_iter=self.max_iter, gtol=self.gtol,
                            seed=self.seed, activation=self.activation)

    @classmethod
    def from_metadata(cls, meta: dict, **overrides) -> "PipelineConfig":
        kw = {k: meta[k] for k in cls.__dataclass_fields__ if k in meta}
        kw.update(overrides)
        return cls(**kw)


@dataclass
class Prepared:
    train: Dataset
    holdout: Dataset


def split_processed(ds: Dataset, cfg: PipelineConfig) -> Prepared:
    """Resample/merge, then a seeded holdout split (holdout is for reporting only)."""
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    proc = resample_and_merge(ds, cfg.n_max, cfg.merge_from, cfg.merge_to, seed=cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    is_hold = rng.random(len(proc)) < cfg.holdout
    return Prepared(proc.subset(np.flatnonzero(~is_hold)), proc.subset(np.flatnonzero(is_hold)))


def train_stage(ds: Dataset, cfg: PipelineConfig, selected=None):
    """Returns (Model with theta*, ranking, OptimizeResult)."""
    ranking = mifs_rank(ds.features, ds.z)
    if selected is None:
        selected = list(ranking.order[:cfg.top_k])
    prep = split_processed(ds, cfg)
    scaler, X = standardize(prep.train, selected, log=cfg.log_features)
    params, res = train_quasi_newton(X, prep.train.z, cfg.train_options())
    meta = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    meta["class_counts"] = prep.train.class_counts().tolist()
    meta["train_accuracy"] = accuracy(params, X, prep.train.z, cfg.activation)
    if len(prep.holdout):
        Xh = scaler.transform(prep.holdout.features)
        meta["holdout_accuracy"] = accuracy(params, Xh, prep.holdout.z, cfg.activation)
    meta["train_iterations"] = res.iterations
    meta["train_cost"] = float(res.trace[-1])
    model = Model(params, scaler, None, cfg.activation, "trained", meta)
    return model, ranking, res


def _train_inputs(ds: Dataset, model: Model, cfg: PipelineConfig):
    prep = split_processed(ds, cfg)
    return model.scaler.transform(prep.train.features), prep.train.z


def calibrate_stage(ds: Dataset, model: Model, gamma: float | None = None):
    """Returns (Model with margins, calibration report dict)."""
    cfg = PipelineConfig.from_metadata(model.metadata)
    gamma = cfg.gamma if gamma is None else gamma
    X, z = _train_inputs(ds, model, cfg)
    r = forward(model.params, X, model.activation).probs
    margins, rows = calibrate_margins(r, z, gamma, cfg.margin_step)
    meta = dict(model.metadata, gamma=gamma)
    out = Model(model.params, model.scaler, margins, model.activation, "calibrated", meta)
    report = {
        "gamma": gamma,
        "n": len(z),
        "rows": [{"d": row.d, "delta": row.delta, "under_rate": row.under_rate,
                  "correct_prob": row.correct_prob} for row in rows],
        # independent re-count of the constraint on the calibration set
        "recount": [underestimation_rate(r, z, row.d, row.delta) for row in rows],
    }
    return out, report


def retrain_stage(ds: Dataset, model: Model):
    """Returns (Model with theta**, OptimizeResult, relabel counts)."""
    if model.margins is None:
        raise ValueError("retraining needs a calibrated model (margins missing)")
    cfg = PipelineConfig.from_metadata(model.metadata)
    X, z = _train_inputs(ds, model, cfg)
    opts = cfg.train_options()
    params, res, zeta = retrain(X, z, model.params, model.margins, opts)
    meta = dict(model.metadata)
    meta["retrain_iterations"] = res.iterations
    meta["retrain_cost"] = float(res.trace[-1])
    meta["relabel_counts"] = np.bincount(zeta, minlength=6)[1:].tolist()
    meta["retrain_accuracy"] = accuracy(params, X, zeta, model.activation)
    out = Model(params, model.scaler, model.margins, model.activation, "retrained", meta)
    return out, res, zeta
