"""Per-RE 2x2 Rayleigh channels and noisy observations.

SNR convention: unit average energy per layer symbol, unit average gain per
channel entry, noise variance sigma2 per receive antenna. Then
SNR = 1 / sigma2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

KINDS = ("iid", "correlated", "tdl")


@dataclass(frozen=True)
class ChannelModel:
    """Channel family.

    kind:
        ``iid``         independent CN(0, 1) entries on every RE.
        ``correlated``  first-order autoregression across the RE index with
                        coefficient ``1 - 1/corr_length``; ``corr_length = 1``
                        is i.i.d.
        ``tdl``         frequency response of a tapped delay line, the REs of
                        a block being consecutive subcarriers of an FFT of size
                        ``fft_size``; ``taps`` is a sequence of
                        (delay in samples, relative power). Tap gains are drawn
                        independently per block and per antenna pair.
    """

    kind: str = "iid"
    corr_length: float = 1.0
    taps: tuple = ()
    fft_size: int = 2048

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}; expected one of {KINDS}")
        if self.corr_length < 1:
            raise ValueError("corr_length must be >= 1")
        if self.kind == "tdl" and not self.taps:
            raise ValueError("tdl channel requires at least one tap")


def _cn(rng: np.random.Generator, shape, var=1.0) -> np.ndarray:
    s = np.sqrt(var / 2.0)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def sample_channels(model: ChannelModel, R: int, seed) -> np.ndarray:
    """Return R channel matrices, shape (R, 2, 2)."""
    if R < 1:
        raise ValueError("R must be >= 1")
    rng = np.random.default_rng(seed)
    if model.kind == "iid":
        return _cn(rng, (R, 2, 2))
    if model.kind == "correlated":
        rho = 1.0 - 1.0 / model.corr_length
        w = _cn(rng, (R, 2, 2))
        if rho == 0.0:
            return w
        innov = np.sqrt(1.0 - rho * rho)
        # first RE drawn from the stationary law
        w[0] /= innov
        return lfilter([innov], [1.0, -rho], w, axis=0)
    delays = np.array([t[0] for t in model.taps], dtype=float)
    power = np.array([t[1] for t in model.taps], dtype=float)
    power = power / power.sum()
    gains = _cn(rng, (len(delays), 2, 2)) * np.sqrt(power)[:, None, None]
    k = np.arange(R)
    phase = np.exp(-2j * np.pi * np.outer(k, delays) / model.fft_size)
    return np.einsum("kl,lij->kij", phase, gains)


def transmit(H, x, sigma2: float, seed) -> np.ndarray:
    """y = H x + n with n ~ CN(0, sigma2 I); works on single REs or batches."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    H = np.asarray(H, dtype=np.complex128)
    x = np.asarray(x, dtype=np.complex128)
    y = (H @ x[..., None])[..., 0]
    if sigma2 == 0:
        return y
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return y + _cn(rng, y.shape, sigma2)


def snr_to_sigma2(snr_db: float) -> float:
    return float(10.0 ** (-snr_db / 10.0))
