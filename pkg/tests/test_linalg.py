"""Unit tests for the matrix kernel.

Derived expectations are computed by independent oracles inside this
file (explicit grid scans, row reduction, hand-built projections), not
by the code under test.
"""

import numpy as np
import pytest

from pathcoupling import linalg
from pathcoupling.errors import DimensionError, DomainError


def _random_rotation(rng, d):
    """Haar-ish rotation via QR with the sign fix that makes R unique."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _row_reduce_rank(a, tol=1e-10):
    """Rank by plain Gaussian elimination with partial pivoting."""
    m = np.array(a, dtype=float)
    n_rows, n_cols = m.shape
    rank = 0
    for col in range(n_cols):
        if rank == n_rows:
            break
        pivot = rank + int(np.argmax(np.abs(m[rank:, col])))
        if np.abs(m[pivot, col]) <= tol:
            continue
        m[[rank, pivot]] = m[[pivot, rank]]
        m[rank] = m[rank] / m[rank, col]
        for r in range(n_rows):
            if r != rank:
                m[r] = m[r] - m[r, col] * m[rank]
        rank += 1
    return rank


def _o2_grid(n_points=10_000):
    """All of O(2) sampled on an angle grid: rotations and reflections."""
    theta = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    ref = rot @ np.diag([1.0, -1.0])
    return np.concatenate([rot, ref], axis=0)


# ---------------------------------------------------------------------------
# svd


def test_svd_reconstructs():
    rng = np.random.default_rng(101)
    for d in (1, 2, 3, 5):
        a = rng.standard_normal((d, d))
        res = linalg.svd(a)
        assert np.allclose(res.reconstruct(), a, atol=1e-10)
        assert np.allclose(res.U.T @ res.U, np.eye(d), atol=1e-10)
        assert np.allclose(res.V.T @ res.V, np.eye(d), atol=1e-10)
        assert np.all(np.diff(res.S) <= 0) and np.all(res.S >= 0)


def test_svd_sign_convention():
    rng = np.random.default_rng(102)
    for _ in range(50):
        a = rng.standard_normal((3, 3))
        res = linalg.svd(a)
        for j in range(3):
            col = res.U[:, j]
            first = col[np.abs(col) > 1e-12][0]
            assert first >= 0.0


def test_svd_deterministic_bitwise():
    rng = np.random.default_rng(103)
    a = rng.standard_normal((4, 4))
    r1, r2 = linalg.svd(a), linalg.svd(a.copy())
    assert np.array_equal(r1.U, r2.U)
    assert np.array_equal(r1.S, r2.S)
    assert np.array_equal(r1.V, r2.V)


def test_svd_diag_singular_values():
    res = linalg.svd(np.diag([3.0, -2.0]))
    assert np.allclose(res.S, [3.0, 2.0], atol=1e-14)


def test_svd_rejects_nonsquare_and_nonfinite():
    with pytest.raises(DimensionError):
        linalg.svd(np.ones((2, 3)))
    with pytest.raises(DomainError):
        linalg.svd(np.array([[1.0, np.nan], [0.0, 1.0]]))


# ---------------------------------------------------------------------------
# pseudoinverse / projections / kernel dimension


def test_pseudoinverse_matches_direct_inverse():
    rng = np.random.default_rng(111)
    a = rng.standard_normal((4, 4)) + 4.0 * np.eye(4)
    assert np.allclose(linalg.pseudoinverse(a), np.linalg.inv(a), atol=1e-10)


@pytest.mark.parametrize(
    "a",
    [
        np.array([[1.0, 2.0], [2.0, 4.0]]),
        np.zeros((3, 3)),
        np.diag([1.0, 0.0, 2.0]),
    ],
)
def test_pseudoinverse_penrose_identities(a):
    p = linalg.pseudoinverse(a)
    assert np.allclose(a @ p @ a, a, atol=1e-10)
    assert np.allclose(p @ a @ p, p, atol=1e-10)
    assert np.allclose((a @ p).T, a @ p, atol=1e-10)
    assert np.allclose((p @ a).T, p @ a, atol=1e-10)


def test_projection_rank_one_oracle():
    # Range projection of [[1,1],[1,1]] is the projection onto span{(1,1)}.
    v = np.array([1.0, 1.0])
    oracle = np.outer(v, v) / (v @ v)
    p = linalg.projection_range(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert np.allclose(p, oracle, atol=1e-12)


def test_projection_idempotent_symmetric():
    rng = np.random.default_rng(112)
    for _ in range(200):
        d = int(rng.integers(1, 6))
        a = rng.standard_normal((d, d))
        if rng.random() < 0.5 and d > 1:
            a[:, 0] = a[:, 1]  # force rank deficiency
        p = linalg.projection_range(a)
        assert np.allclose(p, p.T, atol=1e-10)
        assert np.allclose(p @ p, p, atol=1e-10)


def test_kernel_dim_against_row_reduction():
    rng = np.random.default_rng(113)
    for _ in range(200):
        d = int(rng.integers(1, 6))
        rank = int(rng.integers(0, d + 1))
        a = rng.standard_normal((d, rank)) @ rng.standard_normal((rank, d))
        assert linalg.kernel_dim(a) == d - _row_reduce_rank(a)


def test_kernel_dim_examples():
    assert linalg.kernel_dim(np.array([[1.0, 2.0], [2.0, 4.0]])) == 1
    assert linalg.kernel_dim(np.zeros((3, 3))) == 3
    assert linalg.kernel_dim(np.eye(4)) == 0
    assert linalg.kernel_dim(np.diag([1.0, 0.0])) == 1


# ---------------------------------------------------------------------------
# membership tests


def test_correlation_margin_matches_singular_value_oracle():
    # Eigenvalues of [[I, C], [C^T, I]] are 1 +/- the singular values of C,
    # so the margin must equal 1 - max singular value.
    rng = np.random.default_rng(121)
    for _ in range(100):
        d = int(rng.integers(1, 5))
        c = rng.standard_normal((d, d))
        smax = np.linalg.svd(c, compute_uv=False)[0]
        assert linalg.correlation_margin(c) == pytest.approx(1.0 - smax, abs=1e-10)


def test_is_correlation_examples():
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    assert linalg.is_correlation(rot)
    assert linalg.is_correlation(0.5 * np.eye(2))
    assert linalg.is_correlation(np.array([[0.7]]))
    assert not linalg.is_correlation(1.2 * rot)
    assert not linalg.is_correlation(np.array([[1.01]]))


def test_orthogonal_matrices_are_correlations():
    rng = np.random.default_rng(122)
    for _ in range(1000):
        d = int(rng.integers(1, 5))
        r = _random_rotation(rng, d)
        assert linalg.is_correlation(r)


def test_is_orthogonal():
    rng = np.random.default_rng(123)
    assert linalg.is_orthogonal(np.diag([1.0, -1.0]))
    assert linalg.is_orthogonal(_random_rotation(rng, 3))
    assert not linalg.is_orthogonal(np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert not linalg.is_orthogonal(1.001 * np.eye(2))


# ---------------------------------------------------------------------------
# trace-maximising rotation


def test_trace_max_against_grid_oracle():
    rng = np.random.default_rng(131)
    grid = _o2_grid()
    mats = [np.diag([3.0, -2.0])] + [rng.standard_normal((2, 2)) for _ in range(5)]
    for a in mats:
        q, v = linalg.trace_max_rotation(a)
        oracle = np.einsum("ij,nji->n", a, grid).max()
        assert v == pytest.approx(oracle, abs=1e-6)
        assert np.trace(a @ q) == pytest.approx(v, abs=1e-10)
        assert linalg.is_orthogonal(q, tol=1e-10)


def test_trace_max_diag_example():
    q, v = linalg.trace_max_rotation(np.diag([3.0, -2.0]))
    assert v == pytest.approx(5.0, abs=1e-12)
    assert np.allclose(q, np.diag([1.0, -1.0]), atol=1e-12)


def test_trace_max_on_orthogonal_input():
    rng = np.random.default_rng(132)
    for d in (1, 2, 3, 4):
        r = _random_rotation(rng, d)
        q, v = linalg.trace_max_rotation(r)
        assert v == pytest.approx(float(d), abs=1e-10)
        assert np.allclose(q, r.T, atol=1e-10)


def test_trace_max_value_is_singular_value_sum():
    rng = np.random.default_rng(133)
    for _ in range(100):
        a = rng.standard_normal((3, 3))
        _, v = linalg.trace_max_rotation(a)
        assert v == pytest.approx(np.linalg.svd(a, compute_uv=False).sum(), abs=1e-10)


def test_trace_max_dominates_correlation_class():
    # Tr(A C) over the correlation class is maximised at an orthogonal
    # matrix; sample 10^4 members and check none beats the rotation.
    rng = np.random.default_rng(134)
    a = rng.standard_normal((3, 3))
    _, v = linalg.trace_max_rotation(a)
    u = _random_rotation(rng, 3)
    for _ in range(10_000):
        w = _random_rotation(rng, 3)
        c = u @ np.diag(rng.random(3)) @ w
        assert np.trace(a @ c) <= v + 1e-10


def test_rotation_grid_max_agrees_with_svd_route():
    rng = np.random.default_rng(135)
    for _ in range(5):
        a = rng.standard_normal((2, 2))
        _, v = linalg.trace_max_rotation(a)
        q_grid, v_grid = linalg.rotation_grid_max(a)
        assert abs(v - v_grid) < 1e-6
        assert linalg.is_orthogonal(q_grid, tol=1e-12)
    with pytest.raises(DimensionError):
        linalg.rotation_grid_max(np.eye(3))


def test_trace_max_batch_matches_single():
    rng = np.random.default_rng(136)
    a = rng.standard_normal((7, 3, 3))
    qb, vb = linalg.trace_max_rotation_batch(a)
    for i in range(7):
        q, v = linalg.trace_max_rotation(a[i])
        assert np.allclose(qb[i], q, atol=1e-10)
        assert vb[i] == pytest.approx(v, abs=1e-10)


# ---------------------------------------------------------------------------
# psd square root


def test_psd_sqrt_reconstructs():
    rng = np.random.default_rng(141)
    for d in (1, 2, 4):
        g = rng.standard_normal((d, d))
        a = g @ g.T
        b = linalg.psd_sqrt(a)
        assert np.allclose(b, b.T, atol=1e-12)
        assert np.allclose(b @ b, a, atol=1e-9)


def test_psd_sqrt_zero_matrix():
    assert np.array_equal(linalg.psd_sqrt(np.zeros((3, 3))), np.zeros((3, 3)))


def test_psd_sqrt_clamps_tiny_negativity():
    a = np.eye(2) * 1.0
    a[1, 1] = -5e-11
    b = linalg.psd_sqrt(a)
    assert b[1, 1] == 0.0


def test_psd_sqrt_rejects_bad_input():
    with pytest.raises(DomainError):
        linalg.psd_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(DomainError):
        linalg.psd_sqrt(np.diag([1.0, -1e-6]))


def test_psd_sqrt_batch_matches_single():
    rng = np.random.default_rng(142)
    g = rng.standard_normal((5, 3, 3))
    a = g @ np.swapaxes(g, -1, -2)
    batch = linalg._psd_sqrt_batch(a)
    for i in range(5):
        assert np.allclose(batch[i], linalg.psd_sqrt(a[i]), atol=1e-10)
