import numpy as np
import pytest

from detsel.channel import transmit
from detsel.detectors import (
    LLR_MAX,
    DetectorId,
    candidate_count,
    conditional_best_x2,
    detect_drml,
    detect_icr,
    detect_mmse,
    hard_decisions,
    icr_candidates,
    paired_metrics,
    run_detector,
)
from detsel.modem import build_constellation, random_block

from conftest import crandn


def joint_maxlog_oracle(y, H, s2, c):
    """Exhaustive max-log over all 2^(2M) symbol pairs, L > 0 <=> bit 1."""
    P = c.points
    r = y[:, None, None] - H[:, 0][:, None, None] * P[:, None] - H[:, 1][:, None, None] * P[None, :]
    D = np.sum(np.abs(r) ** 2, axis=0) / s2  # D[i, j] for x1 = P[i], x2 = P[j]
    L = np.empty((2, c.M))
    for m in range(c.M):
        b = c.bits[:, m]
        L[0, m] = D[b == 0, :].min() - D[b == 1, :].min()
        L[1, m] = D[:, b == 0].min() - D[:, b == 1].min()
    return L


def _instances(rng, c, n, snr_db=12.0):
    blk = random_block(c, n, rng.integers(1 << 30))
    H = crandn(rng, n, 2, 2)
    s2 = 10 ** (-snr_db / 10)
    y = transmit(H, blk.symbols, s2, rng.integers(1 << 30))
    return y, H, s2, blk


def test_drml_equals_joint_enumeration_16qam(rng):
    c = build_constellation(4)
    y, H, s2, _ = _instances(rng, c, 300)
    got = detect_drml(y, H, s2, c)
    assert got.ed_count == 16
    for k in range(300):
        ref = joint_maxlog_oracle(y[k], H[k], s2, c)
        np.testing.assert_allclose(got.llr[k], ref, rtol=1e-9, atol=1e-9)


def test_drml_noiseless_recovers_bits(rng):
    c = build_constellation(6)
    blk = random_block(c, 200, 1)
    H = np.eye(2) + 0.3 * crandn(rng, 200, 2, 2)
    y = transmit(H, blk.symbols, 0.0, 0)
    llr = detect_drml(y, H, 1e-3, c)
    np.testing.assert_array_equal(hard_decisions(llr), blk.bits)


def test_drml_ed_count_256qam(rng):
    c = build_constellation(8)
    y, H, s2, _ = _instances(rng, c, 4, 30)
    assert detect_drml(y, H, s2, c).ed_count == 256


def test_conditional_best_x2_noiseless(rng):
    c = build_constellation(4)
    h1, h2 = crandn(rng, 2), crandn(rng, 2)
    x1, x2 = c.points[3], c.points[12]
    assert conditional_best_x2(h1 * x1 + h2 * x2, h1, h2, x1, c) == x2


def test_conditional_best_x2_brute_force(rng):
    c = build_constellation(4)
    n = 10_000
    y = crandn(rng, n, 2) * 2
    h1, h2 = crandn(rng, n, 2), crandn(rng, n, 2)
    x1 = c.points[rng.integers(0, 16, n)]
    got = conditional_best_x2(y, h1, h2, x1, c)
    res = y[:, None, :] - (h1 * x1[:, None])[:, None, :] - h2[:, None, :] * c.points[None, :, None]
    brute = c.points[np.argmin(np.sum(np.abs(res) ** 2, axis=-1), axis=1)]
    np.testing.assert_array_equal(got, brute)


def test_conditional_best_x2_residual_on_point(rng):
    c = build_constellation(4)
    h1, h2 = crandn(rng, 2), crandn(rng, 2)
    x1 = c.points[0]
    y = h1 * (x1 + 0.05) + h2 * c.points[7]
    # perturb x1 so the residual lands on a point: pass the perturbed x1
    assert conditional_best_x2(y, h1, h2, x1 + 0.05, c) == c.points[7]


def test_conditional_best_x2_zero_h2():
    c = build_constellation(2)
    with pytest.raises(ValueError):
        conditional_best_x2(np.ones(2), np.ones(2), np.zeros(2), c.points[0], c)


@pytest.mark.parametrize("M", [4, 6, 8])
def test_icr_full_set_is_drml(M, rng):
    c = build_constellation(M)
    y, H, s2, _ = _instances(rng, c, 200, 20)
    a = detect_icr(y, H, s2, c, c.size)
    b = detect_drml(y, H, s2, c)
    np.testing.assert_array_equal(a.llr, b.llr)
    assert a.ed_count == b.ed_count == c.size


@pytest.mark.parametrize("K", [16, 32, 64])
def test_icr_ed_count(K, rng):
    c = build_constellation(8)
    y, H, s2, _ = _instances(rng, c, 10, 30)
    assert detect_icr(y, H, s2, c, K).ed_count == K


def test_icr_out_of_range():
    c = build_constellation(4)
    with pytest.raises(ValueError):
        detect_icr(np.ones(2), np.eye(2), 1.0, c, 0)
    with pytest.raises(ValueError):
        detect_icr(np.ones(2), np.eye(2), 1.0, c, 17)


def test_icr_single_candidate_clips_everything():
    c = build_constellation(4)
    x = c.points[[5, 9]]
    out = detect_icr(x, np.eye(2), 0.01, c, 1)
    assert np.all(out.clipped)
    assert np.all(np.abs(out.llr) == LLR_MAX)
    np.testing.assert_array_equal(hard_decisions(out), c.bits[[5, 9]])


def test_icr_shared_bit_clipped():
    c = build_constellation(4)
    # center on the outer corner: the 4 nearest points share the first I bit and first Q bit
    corner = c.points[np.argmax(c.points.real + c.points.imag)]
    out = detect_icr(np.array([corner, corner]), np.eye(2), 0.01, c, 4)
    cb = c.bits[np.argmax(c.points.real + c.points.imag)]
    for t in range(2):
        for m in (0, 2):
            assert out.clipped[t, m]
            assert out.llr[t, m] == (LLR_MAX if cb[m] else -LLR_MAX)


def test_icr_monotone_refinement(rng):
    c = build_constellation(8)
    y, H, s2, _ = _instances(rng, c, 300, 25)
    prev = None
    for K in (16, 32, 64, 256):
        cands = icr_candidates(y, H, s2, c, K)
        mins = []
        for t, idx in enumerate(cands):
            ht, ho = H[:, :, t], H[:, :, 1 - t]
            mins.append(paired_metrics(y, ht, ho, c.points[idx], np.full(300, s2), c).min(axis=0))
            if prev is not None:
                assert np.array_equal(idx[: prev[0][t].shape[0]], prev[0][t])
        mins = np.array(mins)
        if prev is not None:
            assert np.all(mins <= prev[1])
        prev = (cands, mins)


def test_mmse_ed_count_zero(rng):
    c = build_constellation(8)
    y, H, s2, _ = _instances(rng, c, 5, 20)
    assert detect_mmse(y, H, s2, c).ed_count == 0


def test_mmse_diagonal_high_snr_recovers_bits(rng):
    c = build_constellation(8)
    blk = random_block(c, 500, 3)
    H = np.zeros((500, 2, 2), complex)
    H[:, 0, 0] = crandn(rng, 500)
    H[:, 1, 1] = crandn(rng, 500)
    H[:, 0, 0] /= np.abs(H[:, 0, 0])  # unit magnitude gains
    H[:, 1, 1] /= np.abs(H[:, 1, 1])
    s2 = 1e-4
    y = transmit(H, blk.symbols, s2, 4)
    np.testing.assert_array_equal(hard_decisions(detect_mmse(y, H, s2, c)), blk.bits)


def test_mmse_diagonal_matches_scalar_demapper(rng):
    c = build_constellation(4)
    n = 300
    H = np.zeros((n, 2, 2), complex)
    H[:, 0, 0] = crandn(rng, n)
    H[:, 1, 1] = crandn(rng, n)
    s2 = 0.2
    y = transmit(H, c.points[rng.integers(0, 16, (n, 2))], s2, 5)
    got = detect_mmse(y, H, s2, c).llr
    for k in range(n):
        for t in range(2):
            d = np.abs(y[k, t] - H[k, t, t] * c.points) ** 2 / s2
            ref = [d[c.bits[:, m] == 0].min() - d[c.bits[:, m] == 1].min() for m in range(4)]
            np.testing.assert_allclose(got[k, t], ref, rtol=1e-9, atol=1e-9)


def test_hard_decisions_boundary():
    L = np.array([3.2, -0.01, 0.0])
    np.testing.assert_array_equal(hard_decisions(L), [1, 0, 0])


def test_ed_accounting_bank():
    c8, c4 = build_constellation(8), build_constellation(4)
    assert [candidate_count(d, c8) for d in DetectorId] == [0, 16, 32, 64, 256]
    assert [candidate_count(d, c4) for d in DetectorId] == [0, 16, 16, 16, 16]


@pytest.mark.parametrize("d", list(DetectorId))
def test_scaling_invariance(d, rng):
    c = build_constellation(8)
    y, H, s2, _ = _instances(rng, c, 200, 28)
    a = run_detector(d, y, H, s2, c)
    k = 7.3
    b = run_detector(d, k * y, k * H, k * k * s2, c)
    np.testing.assert_allclose(b.llr, a.llr, rtol=1e-9, atol=0)


def test_unbatched_inputs(rng):
    c = build_constellation(4)
    y, H, s2, _ = _instances(rng, c, 1)
    single = detect_drml(y[0], H[0], s2, c)
    assert single.llr.shape == (2, 4)
    np.testing.assert_array_equal(single.llr, detect_drml(y, H, s2, c).llr[0])
