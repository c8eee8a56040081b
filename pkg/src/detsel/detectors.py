"""Soft-output 2x2 MIMO detectors producing max-log LLRs.

Detector bank, in ascending complexity:

    1 MMSE    linear MMSE equalization + scalar max-log soft demapper, no EDs
    2 ICR-16  16 candidates per layer
    3 ICR-32  32 candidates per layer
    4 ICR-64  64 candidates per layer
    5 DR-ML   all 2^M symbols of a layer, each paired with the conditionally
              best symbol of the other layer

LLR sign convention: L = (min metric with bit 0) - (min metric with bit 1),
so L > 0 means the hard decision is 1. Metrics are squared Euclidean
distances divided by sigma2. All LLRs are clipped to +-LLR_MAX; a bit whose
0-set or 1-set is empty among the evaluated candidates gets the clip value.

Inputs are batched: y is (N, 2), H is (N, 2, 2), sigma2 a scalar or (N,).
Unbatched (2,) / (2, 2) inputs are accepted and give unbatched outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .modem import Constellation, slice_index
from .numerics import mmse_weights

LLR_MAX = 300.0

# Real operations per Euclidean distance evaluation.
ED_MULTS = 24
ED_ADDS = 21


class DetectorId(IntEnum):
    MMSE = 1
    ICR16 = 2
    ICR32 = 3
    ICR64 = 4
    DRML = 5

    @property
    def label(self) -> str:
        return DETECTOR_NAMES[int(self)]


DETECTOR_NAMES = {1: "MMSE", 2: "ICR-16", 3: "ICR-32", 4: "ICR-64", 5: "DR-ML"}
ICR_CANDIDATES = {2: 16, 3: 32, 4: 64}
N_DETECTORS = 5


@dataclass
class LlrVector:
    """LLRs ``llr[..., t, m]`` for layer t and bit m, plus cost bookkeeping.

    ``ed_count`` is the number of Euclidean distances evaluated per layer.
    """

    llr: np.ndarray
    ed_count: int
    clipped: np.ndarray


def _batch(y, H, sigma2):
    y = np.asarray(y, dtype=np.complex128)
    H = np.asarray(H, dtype=np.complex128)
    single = y.ndim == 1
    if single:
        y, H = y[None], H[None]
    s2 = np.broadcast_to(np.asarray(sigma2, dtype=float), y.shape[:1])
    return y, H, s2, single


def _finish(llr, clipped, ed_count, single) -> LlrVector:
    if single:
        llr, clipped = llr[0], clipped[0]
    return LlrVector(llr=llr, ed_count=ed_count, clipped=clipped)


def _llr_from_minima(l0, l1):
    empty0 = np.isinf(l0)
    empty1 = np.isinf(l1)
    with np.errstate(invalid="ignore"):
        L = l0 - l1
    L = np.where(empty0, LLR_MAX, np.where(empty1, -LLR_MAX, L))
    clipped = empty0 | empty1 | (np.abs(L) > LLR_MAX)
    return np.clip(L, -LLR_MAX, LLR_MAX), clipped


def _maxlog(metric: np.ndarray, cand_bits: np.ndarray):
    """Max-log LLRs from candidate metrics.

    metric is (K, N) and cand_bits (K, N, M). Returns (N, M) LLRs and clip flags.
    """
    m = metric[:, :, None]
    l0 = np.where(cand_bits == 0, m, np.inf).min(axis=0)
    l1 = np.where(cand_bits == 1, m, np.inf).min(axis=0)
    return _llr_from_minima(l0, l1)


def _maxlog_full(metric: np.ndarray, M: int):
    """Same as :func:`_maxlog` when the K = 2^M candidates are all points in index order."""
    N = metric.shape[1]
    l0 = np.empty((N, M))
    l1 = np.empty((N, M))
    for m in range(M):
        part = metric.reshape(1 << m, 2, 1 << (M - 1 - m), N).min(axis=2).min(axis=0)
        l0[:, m] = part[0]
        l1[:, m] = part[1]
    return _llr_from_minima(l0, l1)


def paired_metrics(y, ht, ho, cand, s2, c: Constellation):
    """EDs / sigma2 of candidates ``cand`` (K, N) for layer t, each paired
    with its conditionally best other-layer symbol. Returns (K, N)."""
    e0 = y[:, 0] - ht[:, 0] * cand
    e1 = y[:, 1] - ht[:, 1] * cand
    hn = ho[:, 0].real ** 2 + ho[:, 0].imag ** 2 + ho[:, 1].real ** 2 + ho[:, 1].imag ** 2
    proj = (ho[:, 0].conj() * e0 + ho[:, 1].conj() * e1) / hn
    x_other = c.points[slice_index(c, proj)]
    r0 = e0 - ho[:, 0] * x_other
    r1 = e1 - ho[:, 1] * x_other
    return (r0.real ** 2 + r0.imag ** 2 + r1.real ** 2 + r1.imag ** 2) / s2


def conditional_best_x2(y, h1, h2, x1, c: Constellation):
    """argmin over x2 of ||y - h1 x1 - h2 x2||^2.

    Matched-filter projection onto h2 followed by per-axis slicing, exact for
    square QAM.
    """
    y = np.asarray(y, dtype=np.complex128)
    h1 = np.asarray(h1, dtype=np.complex128)
    h2 = np.asarray(h2, dtype=np.complex128)
    hn = np.sum(np.abs(h2) ** 2, axis=-1)
    if np.any(hn == 0):
        raise ValueError("h2 must be non-zero")
    e = y - h1 * np.asarray(x1)[..., None]
    proj = np.sum(h2.conj() * e, axis=-1) / hn
    return c.points[slice_index(c, proj)]


def _layers(H):
    return ((H[..., :, 0], H[..., :, 1]), (H[..., :, 1], H[..., :, 0]))


def detect_drml(y, H, sigma2, c: Constellation) -> LlrVector:
    y, H, s2, single = _batch(y, H, sigma2)
    if np.any(s2 <= 0):
        raise ValueError("sigma2 must be positive")
    cand = c.points[:, None]
    out, clip = [], []
    for ht, ho in _layers(H):
        metric = paired_metrics(y, ht, ho, cand, s2, c)
        L, cl = _maxlog_full(metric, c.M)
        out.append(L)
        clip.append(cl)
    return _finish(np.stack(out, 1), np.stack(clip, 1), c.size, single)


def _mmse_outputs(y, H, s2):
    """Per-layer equalizer output, gain mu and post-equalization noise+interference variance."""
    W = mmse_weights(H, s2)
    z = np.einsum("ntj,nj->nt", W, y)
    WH = W @ H
    mu = np.stack([WH[:, 0, 0], WH[:, 1, 1]], axis=1)
    interf = np.stack([np.abs(WH[:, 0, 1]) ** 2, np.abs(WH[:, 1, 0]) ** 2], axis=1)
    wnorm = np.sum(np.abs(W) ** 2, axis=-1)
    nu2 = interf + s2[:, None] * wnorm
    return z, mu, nu2


def icr_candidates(y, H, sigma2, c: Constellation, K: int):
    """Candidate point indices per layer, each (K, N), nearest first."""
    y, H, s2, _ = _batch(y, H, sigma2)
    z, mu, _ = _mmse_outputs(y, H, s2)
    center = z / mu
    out = []
    for t in range(2):
        d = np.abs(center[:, t, None] - c.points[None, :]) ** 2
        out.append(np.argsort(d, axis=1, kind="stable")[:, :K].T)
    return out


def detect_icr(y, H, sigma2, c: Constellation, K: int) -> LlrVector:
    """Candidate-reduced DR-ML.

    Per layer, the K constellation points nearest to the unbiased MMSE
    estimate of that layer (ties by point index) form the candidate set.
    """
    if not 1 <= K <= c.size:
        raise ValueError(f"K must be in [1, {c.size}], got {K}")
    y, H, s2, single = _batch(y, H, sigma2)
    if np.any(s2 <= 0):
        raise ValueError("sigma2 must be positive")
    cands = icr_candidates(y, H, s2, c, K)
    out, clip = [], []
    for idx, (ht, ho) in zip(cands, _layers(H)):
        metric = paired_metrics(y, ht, ho, c.points[idx], s2, c)
        L, cl = _maxlog(metric, c.bits[idx])
        out.append(L)
        clip.append(cl)
    return _finish(np.stack(out, 1), np.stack(clip, 1), K, single)


def detect_mmse(y, H, sigma2, c: Constellation) -> LlrVector:
    y, H, s2, single = _batch(y, H, sigma2)
    z, mu, nu2 = _mmse_outputs(y, H, s2)
    out, clip = [], []
    for t in range(2):
        dev = z[:, t] - mu[:, t] * c.points[:, None]
        metric = (dev.real ** 2 + dev.imag ** 2) / nu2[:, t]
        L, cl = _maxlog_full(metric, c.M)
        out.append(L)
        clip.append(cl)
    return _finish(np.stack(out, 1), np.stack(clip, 1), 0, single)


def candidate_count(d: int, c: Constellation) -> int:
    """EDs per layer spent by bank detector d; ICR sizes saturate at 2^M."""
    if d == DetectorId.MMSE:
        return 0
    if d == DetectorId.DRML:
        return c.size
    return min(ICR_CANDIDATES[d], c.size)


def run_detector(d: int, y, H, sigma2, c: Constellation) -> LlrVector:
    """Run bank detector ``d`` (1..5)."""
    d = int(d)
    if d == DetectorId.MMSE:
        return detect_mmse(y, H, sigma2, c)
    if d == DetectorId.DRML:
        return detect_drml(y, H, sigma2, c)
    if d in ICR_CANDIDATES:
        return detect_icr(y, H, sigma2, c, candidate_count(d, c))
    raise ValueError(f"unknown detector id {d}")


def hard_decisions(llr) -> np.ndarray:
    """Bit 1 where L > 0, else 0."""
    L = llr.llr if isinstance(llr, LlrVector) else np.asarray(llr)
    return (L > 0).astype(np.uint8)
