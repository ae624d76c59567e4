import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bcgm.numerics import (EPS_REL, NotPSDError, RngStream, chol_psd, clamp_psd, derive_stream_id, gaussian,
                           numerical_rank, pinv, truncated_svd)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def penrose_residuals(M, P):
    return (np.linalg.norm(M @ P @ M - M, 2), np.linalg.norm(P @ M @ P - P, 2),
            np.linalg.norm((M @ P).T - M @ P, 2), np.linalg.norm((P @ M).T - P @ M, 2))


def test_pinv_identity_and_diagonal():
    np.testing.assert_array_equal(pinv(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(pinv([[2.0, 0.0], [0.0, 0.0]]), [[0.5, 0.0], [0.0, 0.0]], atol=0)


def test_pinv_wide_full_row_rank_penrose():
    M = np.random.default_rng(0).standard_normal((5, 8))
    assert max(penrose_residuals(M, pinv(M))) <= 1e-9


@given(shape=st.sampled_from([(3, 7), (7, 3), (5, 5), (1, 4), (6, 1)]), rank_drop=st.integers(0, 2),
       seed=st.integers(0, 2**32 - 1))
def test_pinv_penrose_every_shape_class(shape, rank_drop, seed):
    rng = np.random.default_rng(seed)
    k = max(min(shape) - rank_drop, 1)
    M = rng.standard_normal((shape[0], k)) @ rng.standard_normal((k, shape[1]))
    scale = max(1.0, np.linalg.norm(M, 2))
    assert max(penrose_residuals(M, pinv(M))) <= 1e-9 * scale ** 2


def test_truncation_rule_uses_relative_threshold():
    s_small = 0.5 * EPS_REL * 4
    M = np.diag([1.0, s_small, 0, 0])[:3]
    assert numerical_rank(M) == 1
    assert truncated_svd(np.zeros((2, 3)))[1].size == 0


def test_chol_examples():
    np.testing.assert_allclose(chol_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-12)
    np.testing.assert_array_equal(chol_psd(np.zeros((2, 2))), np.zeros((2, 2)))
    v = np.array([[1.0], [2.0]])
    L = chol_psd(v @ v.T)
    np.testing.assert_allclose(L @ L.T, v @ v.T, atol=1e-10)


@given(n=st.integers(1, 6), k=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_chol_reconstructs_random_psd(n, k, seed):
    G = np.random.default_rng(seed).standard_normal((n, k))
    S = G @ G.T
    L = chol_psd(S)
    assert np.linalg.norm(L @ L.T - S, 2) <= 1e-8 * (1 + np.linalg.norm(S, 2))


def test_indefinite_is_rejected_and_tiny_negative_clamped():
    with pytest.raises(NotPSDError):
        chol_psd(np.diag([1.0, -0.1]))
    S = np.diag([1.0, -1e-12])
    lam, _, clamped = clamp_psd(S)
    assert lam.min() == 0.0 and clamped == pytest.approx(1e-12)
    with pytest.raises(ValueError, match="symmetric"):
        chol_psd(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_gaussian_zero_factor_and_determinism():
    mean = np.array([1.0, -2.0])
    np.testing.assert_array_equal(gaussian(RngStream(1), mean, np.zeros((2, 3))), mean)
    a = gaussian(RngStream(9, 4), np.zeros(3), np.eye(3))
    b = gaussian(RngStream(9, 4), np.zeros(3), np.eye(3))
    np.testing.assert_array_equal(a, b)


def test_gaussian_moments():
    rng = RngStream(3)
    draws = np.array([gaussian(rng, np.zeros(2), np.eye(2)) for _ in range(20000)])
    draws = np.vstack([draws, rng.standard_normal((80000, 2))])
    assert np.abs(draws.mean(0)).max() < 0.02
    assert np.abs(np.cov(draws.T) - np.eye(2)).max() < 0.02


def test_gaussian_shape_mismatch():
    with pytest.raises(ValueError):
        gaussian(RngStream(0), np.zeros(2), np.eye(3))


def test_streams_reproducible_and_distinct():
    a = RngStream(42, 7).standard_normal(64)
    assert a.tobytes() == RngStream(42, 7).standard_normal(64).tobytes()
    assert not np.array_equal(a, RngStream(42, 8).standard_normal(64))
    parent = RngStream(42, 7)
    assert parent.spawn("x").stream_id == RngStream(42, 7).spawn("x").stream_id
    assert parent.spawn("x").stream_id != parent.spawn("y").stream_id
    assert derive_stream_id("a", 1) != derive_stream_id("a1")


@pytest.mark.parametrize("kind", ["gaussian", "uniform", "laplace"])
def test_standardized_kinds_have_unit_variance(kind):
    x = RngStream(11).standardized(200000, kind)
    assert abs(x.mean()) < 3 / np.sqrt(x.size) * 3
    assert abs(x.var() - 1) < 0.02


def test_as_matrix_rejects_nonfinite():
    from bcgm.numerics import as_matrix

    with pytest.raises(ValueError):
        as_matrix([[np.nan]])


@given(arrays(float, (4, 3), elements=finite))
def test_truncated_svd_reconstructs(M):
    U, s, Vt = truncated_svd(M)
    scale = max(1.0, np.abs(M).max())
    np.testing.assert_allclose((U * s) @ Vt, M, atol=1e-9 * scale)
