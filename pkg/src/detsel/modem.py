"""Square QAM with per-axis Gray labeling, and transport-block framing.

Bit layout of a symbol (MSB first, M bits): the first M/2 bits select the
in-phase PAM level, the remaining M/2 bits the quadrature level. Per axis the
level follows the 3GPP-style recursion

    v(b1..bk) = (1 - 2 b1) * (2^(k-1) - v(b2..bk)),   v(b) = 1 - 2 b

which is a Gray labeling of the PAM levels {+-1, +-3, ..., +-(2^k - 1)}.
Point index k in a Constellation is the integer value of its bit pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SUPPORTED_ORDERS = (2, 4, 6, 8)


def _axis_level(bits) -> int:
    v = 1 - 2 * int(bits[-1])
    for j, b in enumerate(reversed(bits[:-1]), start=1):
        v = (1 - 2 * int(b)) * ((1 << j) - v)
    return v


@dataclass(frozen=True)
class Constellation:
    """Unit-energy square QAM constellation.

    ``points[k]`` is the symbol carrying bit pattern ``bits[k]``; patterns are
    enumerated in binary order so ``k`` is also the pattern's integer value.
    """

    M: int
    points: np.ndarray = field(repr=False)
    bits: np.ndarray = field(repr=False)
    scale: float
    # level index (most negative first) -> axis bit pattern integer
    axis_pattern: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return 1 << self.M

    @property
    def levels_per_axis(self) -> int:
        return 1 << (self.M // 2)


def build_constellation(M: int) -> Constellation:
    if M not in SUPPORTED_ORDERS:
        raise ValueError(f"modulation order M must be one of {SUPPORTED_ORDERS}, got {M}")
    k = M // 2
    L = 1 << k
    scale = np.sqrt(2.0 * (L * L - 1) / 3.0)
    idx = np.arange(1 << M)
    bits = ((idx[:, None] >> np.arange(M - 1, -1, -1)) & 1).astype(np.uint8)
    axis_bits = ((np.arange(L)[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.uint8)
    axis_val = np.array([_axis_level(b) for b in axis_bits])
    re = axis_val[idx >> k]
    im = axis_val[idx & (L - 1)]
    points = (re + 1j * im) / scale
    # level value -(L-1) + 2 i  ->  pattern
    axis_pattern = np.empty(L, dtype=np.int64)
    axis_pattern[(axis_val + L - 1) // 2] = np.arange(L)
    for arr in (points, bits, axis_pattern):
        arr.setflags(write=False)
    return Constellation(M=M, points=points, bits=bits, scale=float(scale), axis_pattern=axis_pattern)


def bits_to_index(bits, M: int) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.shape[-1] != M:
        raise ValueError(f"expected {M} bits per symbol, got {bits.shape[-1]}")
    weights = 1 << np.arange(M - 1, -1, -1)
    return (bits.astype(np.int64) * weights).sum(axis=-1)


def map_bits(c: Constellation, bits):
    """Gray-map the last axis of ``bits`` (length M) to constellation points."""
    return c.points[bits_to_index(bits, c.M)]


def hard_demap(c: Constellation, v):
    """Nearest constellation point by exhaustive search.

    Ties go to the smaller point index. Returns (points, bits).
    """
    v = np.asarray(v, dtype=np.complex128)
    d = np.abs(v[..., None] - c.points) ** 2
    k = np.argmin(d, axis=-1)
    return c.points[k], c.bits[k]


def slice_index(c: Constellation, v) -> np.ndarray:
    """Nearest point index by independent per-axis PAM slicing.

    Agrees with :func:`hard_demap` everywhere except on exact decision
    boundaries, which carry zero probability under continuous noise.
    """
    v = np.asarray(v) * c.scale
    L = c.levels_per_axis
    i_re = np.clip(np.rint((v.real + (L - 1)) * 0.5), 0, L - 1).astype(np.int64)
    i_im = np.clip(np.rint((v.imag + (L - 1)) * 0.5), 0, L - 1).astype(np.int64)
    return (c.axis_pattern[i_re] << (c.M // 2)) | c.axis_pattern[i_im]


@dataclass
class TransportBlock:
    """Bits and symbols of one block: ``bits`` is (R, 2, M), ``symbols`` is (R, 2)."""

    bits: np.ndarray
    symbols: np.ndarray

    @property
    def n_re(self) -> int:
        return self.bits.shape[0]


def random_block(c: Constellation, R: int, rng_seed) -> TransportBlock:
    if R < 1:
        raise ValueError("a block needs at least one resource element")
    rng = np.random.default_rng(rng_seed)
    bits = rng.integers(0, 2, size=(R, 2, c.M), dtype=np.uint8)
    return TransportBlock(bits=bits, symbols=map_bits(c, bits))
