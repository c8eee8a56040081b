"""Closed-form 2x2 complex linear algebra.

Every function accepts a single matrix of shape (2, 2) or a batch of shape
(..., 2, 2) and operates element-wise over the leading dimensions.
"""

from __future__ import annotations

import numpy as np

# Relative threshold below which the second Gram-Schmidt vector is treated as zero.
_RANK_TOL = 1e-14


def _as_batch(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.complex128)
    if A.shape[-2:] != (2, 2):
        raise ValueError(f"expected (..., 2, 2) matrices, got shape {A.shape}")
    return A


def qr_decompose_2x2(H):
    """QR factorization H = Q R by Gram-Schmidt with re-orthogonalization.

    R is upper triangular with a real, non-negative diagonal. A rank-one H
    yields r22 = 0 and a second column of Q completing the unitary basis.

    Raises ValueError if the first column of any matrix is zero.
    """
    H = _as_batch(H)
    h1 = H[..., :, 0]
    h2 = H[..., :, 1]
    r11 = np.sqrt(np.sum(np.abs(h1) ** 2, axis=-1))
    if np.any(r11 == 0):
        raise ValueError("degenerate input: first column of H is zero")
    q1 = h1 / r11[..., None]
    r12 = np.sum(q1.conj() * h2, axis=-1)
    v = h2 - q1 * r12[..., None]
    # second pass keeps Q unitary to machine precision for ill-conditioned H
    c = np.sum(q1.conj() * v, axis=-1)
    v = v - q1 * c[..., None]
    r12 = r12 + c
    r22 = np.sqrt(np.sum(np.abs(v) ** 2, axis=-1))
    rank1 = r22 <= _RANK_TOL * r11
    safe = np.where(rank1, 1.0, r22)
    q2 = v / safe[..., None]
    # orthogonal complement of q1 in C^2
    comp = np.stack([-q1[..., 1].conj(), q1[..., 0].conj()], axis=-1)
    q2 = np.where(rank1[..., None], comp, q2)
    r22 = np.where(rank1, 0.0, r22)

    Q = np.stack([q1, q2], axis=-1)
    R = np.zeros_like(H)
    R[..., 0, 0] = r11
    R[..., 0, 1] = r12
    R[..., 1, 1] = r22
    return Q, R


def det_2x2(A) -> np.ndarray:
    A = _as_batch(A)
    return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]


def gram_2x2(H) -> np.ndarray:
    """H^* H."""
    H = _as_batch(H)
    return np.swapaxes(H.conj(), -1, -2) @ H


def hermitian_eigenvalues_2x2(A, tol: float = 1e-10):
    """Eigenvalues (lambda_min, lambda_max) of a Hermitian 2x2 matrix.

    Closed form from trace and determinant. lambda_min is obtained as
    det / lambda_max, which keeps full relative precision when the matrix is
    close to singular.
    """
    A = _as_batch(A)
    scale = np.maximum(1.0, np.max(np.abs(A), axis=(-1, -2)))
    asym = np.max(np.abs(A - np.swapaxes(A.conj(), -1, -2)), axis=(-1, -2))
    if np.any(asym > tol * scale):
        raise ValueError("matrix is not Hermitian within tolerance")
    a = A[..., 0, 0].real
    d = A[..., 1, 1].real
    b = A[..., 0, 1]
    half_tr = 0.5 * (a + d)
    disc = np.hypot(0.5 * (a - d), np.abs(b))
    lam_max = half_tr + disc
    det = a * d - np.abs(b) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        lam_min = np.where(lam_max > 0, det / np.where(lam_max > 0, lam_max, 1.0), half_tr - disc)
    return lam_min, lam_max


def inverse_2x2(A) -> np.ndarray:
    A = _as_batch(A)
    det = det_2x2(A)
    inv = np.empty_like(A)
    inv[..., 0, 0] = A[..., 1, 1]
    inv[..., 1, 1] = A[..., 0, 0]
    inv[..., 0, 1] = -A[..., 0, 1]
    inv[..., 1, 0] = -A[..., 1, 0]
    return inv / det[..., None, None]


def mmse_weights(H, sigma2):
    """Linear MMSE filter W = (H^* H + sigma2 I)^{-1} H^*.

    Row t of W equalizes layer t. sigma2 may be a scalar or broadcast over
    the batch dimensions of H.
    """
    H = _as_batch(H)
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        raise ValueError("sigma2 must be positive")
    G = gram_2x2(H)
    G[..., 0, 0] += sigma2
    G[..., 1, 1] += sigma2
    return inverse_2x2(G) @ np.swapaxes(H.conj(), -1, -2)
