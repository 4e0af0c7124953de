import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sde_ident.numerics import (
    chi2_cdf,
    chi2_quantile,
    cholesky,
    discrete_lyapunov,
    mat_exp,
    normal_pdf_cdf,
    psd_sqrt,
    spd_solve,
)

from oracles import exp_series, matrix_exp_series


class TestMatExp:
    def test_zero_matrix_gives_identity(self):
        np.testing.assert_array_equal(mat_exp(np.zeros((2, 2)), 3.7), np.eye(2))

    def test_nilpotent(self):
        t = 0.37
        np.testing.assert_allclose(mat_exp([[0, 1], [0, 0]], t), [[1, t], [0, 1]], atol=1e-15)

    def test_scalar_against_series(self):
        expected = exp_series(-0.02)
        assert abs(expected - 0.980199) < 1e-6
        np.testing.assert_allclose(mat_exp([[-2.0]], 0.01), [[expected]], rtol=1e-14)

    @pytest.mark.parametrize(
        "F",
        [
            [[0.0, 1.0], [-3.0, -5.0]],  # real distinct eigenvalues
            [[0.0, 1.0], [-7.0, -2.0]],  # complex pair
            [[-1.0, 1.0], [0.0, -1.0]],  # defective
            [[0.0, 1.0], [-1e-10, -2e-5]],  # nearly repeated
            [[-0.3, 2.0], [0.1, 0.4]],
        ],
    )
    def test_2x2_against_series(self, F):
        F = np.array(F)
        for t in (1e-3, 0.01, 0.5, 2.0):
            np.testing.assert_allclose(mat_exp(F, t), matrix_exp_series(F * t), rtol=1e-12, atol=1e-15)

    def test_stiff_matrix_stays_finite(self):
        out = mat_exp([[0.0, 1.0], [-1.0, -2000.0]], 1.0)
        assert np.all(np.isfinite(out))

    def test_larger_matrix_uses_general_path(self):
        F = np.diag([-1.0, -2.0, -3.0])
        np.testing.assert_allclose(mat_exp(F, 0.5), np.diag(np.exp([-0.5, -1.0, -1.5])), rtol=1e-13)

    @pytest.mark.parametrize("bad", [np.ones((2, 3)), [[np.nan, 0], [0, 0]]])
    def test_rejects_bad_input(self, bad):
        with pytest.raises(ValueError):
            mat_exp(bad, 1.0)

    def test_rejects_negative_time(self):
        with pytest.raises(ValueError):
            mat_exp(np.eye(2), -1.0)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(-3, 3), min_size=4, max_size=4),
        st.floats(0, 1),
        st.floats(0, 1),
    )
    def test_semigroup(self, entries, t1, t2):
        F = np.array(entries).reshape(2, 2)
        F = F - (max(0.0, np.max(np.linalg.eigvals(F).real)) + 0.1) * np.eye(2)
        np.testing.assert_allclose(mat_exp(F, t1 + t2), mat_exp(F, t1) @ mat_exp(F, t2), atol=1e-9)


class TestCholesky:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_reconstruction(self, d, seed):
        rng = np.random.default_rng(seed)
        B = rng.normal(size=(d, d))
        M = B @ B.T + 1e-3 * np.eye(d)
        L = cholesky(M)
        assert np.all(np.diag(L) > 0)
        err = np.max(np.sum(np.abs(L @ L.T - M), axis=1))
        assert err <= 1e-10 * np.max(np.sum(np.abs(M), axis=1))

    def test_jitter_rescues_singular(self):
        M = np.ones((3, 3))
        L = cholesky(M)
        np.testing.assert_allclose(L @ L.T, M, atol=1e-5)

    def test_indefinite_raises(self):
        with pytest.raises(np.linalg.LinAlgError):
            cholesky(np.diag([1.0, -1.0]))

    def test_spd_solve(self):
        rng = np.random.default_rng(42)
        B = rng.normal(size=(4, 4))
        M = B @ B.T + np.eye(4)
        b = rng.normal(size=4)
        np.testing.assert_allclose(M @ spd_solve(M, b), b, atol=1e-12)

    def test_psd_sqrt_singular(self):
        M = np.array([[1.0, 1.0], [1.0, 1.0]])
        S = psd_sqrt(M)
        np.testing.assert_allclose(S @ S.T, M, atol=1e-12)
        np.testing.assert_array_equal(psd_sqrt(np.zeros((2, 2))), np.zeros((2, 2)))


class TestLyapunov:
    def test_zero_transition(self):
        np.testing.assert_array_equal(discrete_lyapunov([[0.0]], [[1.0]]), [[1.0]])
        np.testing.assert_allclose(discrete_lyapunov(np.zeros((2, 2)), np.eye(2)), np.eye(2))

    def test_scalar_closed_form(self):
        P = discrete_lyapunov([[0.98]], [[4e-4]])
        np.testing.assert_allclose(P, [[4e-4 / (1 - 0.98**2)]], rtol=1e-14)
        assert abs(P[0, 0] - 0.010101) < 1e-6

    def test_unstable_raises(self):
        with pytest.raises(ValueError, match="not stable"):
            discrete_lyapunov([[1.0]], [[1.0]])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_residual(self, seed):
        rng = np.random.default_rng(seed)
        B = rng.normal(size=(2, 2))
        A = 0.97 * B / np.max(np.abs(np.linalg.eigvals(B)))
        L = rng.normal(size=(2, 2))
        Q = L @ L.T
        P = discrete_lyapunov(A, Q)
        assert np.max(np.abs(P - A @ P @ A.T - Q)) <= 1e-10 * max(1.0, np.max(np.abs(P)))


def _chi2_cdf_series(x, k):
    # lower regularized gamma by its power series, independent of scipy
    a = k / 2.0
    y = x / 2.0
    term = 1.0 / a
    total = term
    n = 1
    while term > 1e-17 * total:
        term *= y / (a + n)
        total += term
        n += 1
    return math.exp(-y + a * math.log(y) - math.lgamma(a)) * total


class TestChiSquared:
    def test_dof2_median(self):
        assert chi2_quantile(2, 0.5) == pytest.approx(2 * math.log(2), rel=1e-11)

    def test_dof1_median_against_series_bisection(self):
        lo, hi = 0.0, 5.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if _chi2_cdf_series(mid, 1) < 0.5 else (lo, mid)
        assert lo == pytest.approx(0.454936, abs=1e-6)
        assert chi2_quantile(1, 0.5) == pytest.approx(lo, rel=1e-10)

    def test_large_dof_against_wilson_hilferty(self):
        k = 100000
        z = 1.6448536269514722
        h = 2 / (9 * k)
        wh = (1 - h + z * math.sqrt(h)) ** 3
        got = chi2_quantile(k, 0.95) / k
        assert got == pytest.approx(wh, abs=1e-6)
        assert got == pytest.approx(1.00737, abs=1e-5)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_bad_probability(self, p):
        with pytest.raises(ValueError):
            chi2_quantile(3, p)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 10**6), st.floats(1e-6, 1 - 1e-6))
    def test_inverts_cdf(self, k, p):
        assert abs(chi2_cdf(chi2_quantile(k, p), k) - p) <= 1e-8

    def test_cdf_matches_series(self):
        for k in (1, 2, 5, 17):
            for x in (0.1, 1.0, 4.0, 12.0):
                assert float(chi2_cdf(x, k)) == pytest.approx(_chi2_cdf_series(x, k), rel=1e-12)


class TestNormal:
    def test_origin(self):
        pdf, cdf = normal_pdf_cdf(0.0)
        assert pdf == pytest.approx(0.3989422804014327, abs=1e-15)
        assert cdf == 0.5

    def test_far_tail(self):
        pdf, cdf = normal_pdf_cdf(40.0)
        assert pdf < 1e-300 and cdf == 1.0

    def test_quantile(self):
        assert normal_pdf_cdf(1.644854)[1] == pytest.approx(0.95, abs=1e-6)

    def test_vectorized(self):
        pdf, cdf = normal_pdf_cdf(np.array([-1.0, 1.0]))
        np.testing.assert_allclose(pdf[0], pdf[1])
        np.testing.assert_allclose(cdf[0] + cdf[1], 1.0, atol=1e-15)

    def test_non_finite_raises(self):
        with pytest.raises(ValueError):
            normal_pdf_cdf(np.inf)
