"""Generic LDPC stand-in for the transport-block decoder, and uncoded block errors.

LLRs follow the detector convention throughout: L > 0 means bit 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np


class AlistFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ParityCheckMatrix:
    m: int
    n: int
    rows: tuple  # rows[i] = sorted column indices of check i
    cols: tuple  # cols[j] = sorted row indices of variable j

    def __post_init__(self):
        if self.n <= self.m:
            raise ValueError("need n > m")
        if any(len(r) == 0 for r in self.rows) or any(len(c) == 0 for c in self.cols):
            raise ValueError("parity-check matrix has an empty row or column")

    @classmethod
    def from_dense(cls, A) -> "ParityCheckMatrix":
        A = np.asarray(A) % 2
        m, n = A.shape
        rows = tuple(tuple(int(j) for j in np.flatnonzero(A[i])) for i in range(m))
        cols = tuple(tuple(int(i) for i in np.flatnonzero(A[:, j])) for j in range(n))
        return cls(m, n, rows, cols)

    def dense(self) -> np.ndarray:
        A = np.zeros((self.m, self.n), dtype=np.uint8)
        for i, r in enumerate(self.rows):
            A[i, list(r)] = 1
        return A

    def syndrome(self, bits) -> np.ndarray:
        return (self.dense().astype(np.int64) @ np.asarray(bits, dtype=np.int64)) % 2

    @cached_property
    def _edges(self):
        er = np.concatenate([np.full(len(r), i) for i, r in enumerate(self.rows)])
        ec = np.concatenate([np.array(r) for r in self.rows])
        starts = np.concatenate([[0], np.cumsum([len(r) for r in self.rows])[:-1]])
        return er, ec, starts

    @cached_property
    def _systematic(self):
        """GF(2) elimination: (pivot columns, free columns, parity map P)
        with codeword[pivots] = P @ codeword[free] mod 2."""
        A = self.dense().copy()
        m, n = A.shape
        pivots = []
        row = 0
        for col in range(n):
            if row == m:
                break
            hits = np.flatnonzero(A[row:, col])
            if len(hits) == 0:
                continue
            p = row + hits[0]
            if p != row:
                A[[row, p]] = A[[p, row]]
            others = np.flatnonzero(A[:, col])
            others = others[others != row]
            A[others] ^= A[row]
            pivots.append(col)
            row += 1
        if len(pivots) < m:
            raise ValueError(f"parity-check matrix is rank deficient (rank {len(pivots)} < {m})")
        free = np.array([j for j in range(n) if j not in set(pivots)])
        P = A[:, free]
        return np.array(pivots), free, P

    @property
    def k(self) -> int:
        return self.n - self.m

    @property
    def info_positions(self) -> np.ndarray:
        return self._systematic[1]


# ----------------------------------------------------------------------------
# alist I/O


def parse_alist(text: str) -> ParityCheckMatrix:
    lines = [ln for ln in text.splitlines()]

    def ints(lineno: int, expect: int | None = None):
        if lineno >= len(lines):
            raise AlistFormatError(f"line {lineno + 1}: unexpected end of file")
        try:
            vals = [int(t) for t in lines[lineno].split()]
        except ValueError:
            raise AlistFormatError(f"line {lineno + 1}: non-integer token") from None
        if expect is not None and len(vals) != expect:
            raise AlistFormatError(f"line {lineno + 1}: expected {expect} values, got {len(vals)}")
        return vals

    n, m = ints(0, 2)
    max_c, max_r = ints(1, 2)
    col_deg = ints(2, n)
    row_deg = ints(3, m)
    if max(col_deg) != max_c or max(row_deg) != max_r:
        raise AlistFormatError("line 2: maximum degrees do not match degree lists")
    cols, rows = [], []
    for j in range(n):
        v = ints(4 + j)
        if len(v) < col_deg[j] or any(x != 0 for x in v[col_deg[j]:]):
            raise AlistFormatError(f"line {5 + j}: column {j + 1} degree mismatch")
        cols.append(v[:col_deg[j]])
    for i in range(m):
        v = ints(4 + n + i)
        if len(v) < row_deg[i] or any(x != 0 for x in v[row_deg[i]:]):
            raise AlistFormatError(f"line {5 + n + i}: row {i + 1} degree mismatch")
        rows.append(v[:row_deg[i]])
    A = np.zeros((m, n), dtype=np.uint8)
    for j, c in enumerate(cols):
        for i in c:
            if not 1 <= i <= m:
                raise AlistFormatError(f"line {5 + j}: row index {i} out of range")
            A[i - 1, j] = 1
    B = np.zeros_like(A)
    for i, r in enumerate(rows):
        for j in r:
            if not 1 <= j <= n:
                raise AlistFormatError(f"line {5 + n + i}: column index {j} out of range")
            B[i, j - 1] = 1
    if not np.array_equal(A, B):
        raise AlistFormatError("column and row adjacency lists disagree")
    if A.sum() != sum(col_deg):
        raise AlistFormatError("duplicate entries in adjacency lists")
    return ParityCheckMatrix.from_dense(A)


def load_alist(path) -> ParityCheckMatrix:
    return parse_alist(Path(path).read_text())


def alist_text(H: ParityCheckMatrix) -> str:
    col_deg = [len(c) for c in H.cols]
    row_deg = [len(r) for r in H.rows]
    mc, mr = max(col_deg), max(row_deg)
    out = [f"{H.n} {H.m}", f"{mc} {mr}", " ".join(map(str, col_deg)), " ".join(map(str, row_deg))]
    out += [" ".join(str(i + 1) for i in c) + " 0" * (mc - len(c)) for c in H.cols]
    out += [" ".join(str(j + 1) for j in r) + " 0" * (mr - len(r)) for r in H.rows]
    return "\n".join(out) + "\n"


def write_alist(path, H: ParityCheckMatrix) -> None:
    Path(path).write_text(alist_text(H))


def random_ldpc(n: int, m: int, col_weight: int = 3, seed=0, max_tries: int = 100) -> ParityCheckMatrix:
    """Random column-weight-regular matrix with balanced row degrees and full rank."""
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        A = np.zeros((m, n), dtype=np.uint8)
        load = np.zeros(m)
        for j in range(n):
            # least-loaded rows first, random tie-break
            order = np.lexsort((rng.random(m), load))
            A[order[:col_weight], j] = 1
            load[order[:col_weight]] += 1
        H = ParityCheckMatrix.from_dense(A)
        try:
            H._systematic
        except ValueError:
            continue
        return H
    raise RuntimeError("could not draw a full-rank parity-check matrix")


# ----------------------------------------------------------------------------
# Encoding / decoding


def encode(H: ParityCheckMatrix, info_bits) -> np.ndarray:
    pivots, free, P = H._systematic
    info = np.asarray(info_bits, dtype=np.int64)
    if info.shape[-1] != len(free):
        raise ValueError(f"expected {len(free)} information bits, got {info.shape[-1]}")
    c = np.zeros(info.shape[:-1] + (H.n,), dtype=np.uint8)
    c[..., free] = info
    c[..., pivots] = (info @ P.T.astype(np.int64)) % 2
    return c


@dataclass
class BlockDecision:
    bits: np.ndarray          # decoded information bits
    codeword: np.ndarray      # decoded codeword (hard posterior)
    converged: bool
    iterations: int
    block_error: bool | None = None
    posterior: np.ndarray = field(default=None, repr=False)


def decode_min_sum(H: ParityCheckMatrix, llrs, max_iter: int = 50, alpha: float = 0.75,
                   true_info=None) -> BlockDecision:
    """Normalized min-sum (flooding schedule) with early exit on a zero syndrome.

    A posterior of exactly zero is an undecided bit; convergence requires a
    zero syndrome with every bit decided.
    """
    llrs = np.asarray(llrs, dtype=float)
    if llrs.shape != (H.n,):
        raise ValueError(f"expected {H.n} LLRs, got shape {llrs.shape}")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    lam = -llrs  # internal convention: positive favours 0
    er, ec, starts = H._edges
    r = np.zeros(len(er))
    post = lam.copy()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        q = post[ec] - r
        mag = np.abs(q)
        neg = (q < 0).astype(np.int64)
        min1 = np.minimum.reduceat(mag, starts)
        # mark the first occurrence of the row minimum on each row
        pos = np.flatnonzero(mag == min1[er])
        _, firsts = np.unique(er[pos], return_index=True)
        first = np.zeros(len(er), dtype=bool)
        first[pos[firsts]] = True
        mag2 = np.where(first, np.inf, mag)
        min2 = np.minimum.reduceat(mag2, starts)
        parity = np.add.reduceat(neg, starts) % 2
        sign = np.where((parity[er] + neg) % 2 == 1, -1.0, 1.0)
        r = alpha * sign * np.where(first, min2[er], min1[er])
        post = lam + np.bincount(ec, weights=r, minlength=H.n)
        hard = (post < 0).astype(np.uint8)
        if np.all(post != 0) and not np.any(np.add.reduceat(hard[ec], starts) % 2):
            converged = True
            break
    hard = (post < 0).astype(np.uint8)
    info = hard[H.info_positions]
    block_error = None
    if true_info is not None:
        block_error = bool(np.any(info != np.asarray(true_info)))
    return BlockDecision(info, hard, converged, it, block_error, -post)


def uncoded_block_error(hard_bits, true_bits) -> bool:
    a = np.asarray(hard_bits).ravel()
    b = np.asarray(true_bits).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return bool(np.any(a != b))
