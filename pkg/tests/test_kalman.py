import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sde_ident.kalman import (
    FAILED_OBJECTIVE,
    DegenerateInnovation,
    default_init,
    fast_log_likelihood,
    kalman_filter,
    log_likelihood,
    make_objective,
    rts_smooth,
)
from sde_ident.model import DiscreteModel, params_to_discrete
from sde_ident.simulate import simulate

from oracles import dense_loglik, dense_posterior, random_stable_model


def _instance(seed, d, N):
    rng = np.random.default_rng(seed)
    A, Q, R = random_stable_model(rng, d)
    m0 = rng.normal(size=d)
    L = rng.normal(size=(d, d))
    P0 = L @ L.T + 0.1 * np.eye(d)
    z = rng.normal(size=N) * 2
    return DiscreteModel(A=A, Q=Q, R=R), (m0, P0), z


class TestLogLikelihood:
    def test_empty(self):
        m = DiscreteModel(A=[[0.5]], Q=[[1.0]], R=1.0)
        ll, fs = log_likelihood(m, [])
        assert ll == 0.0 and fs.N == 0
        assert fast_log_likelihood(m, []) == 0.0

    def test_single_step_closed_form(self):
        m = DiscreteModel(A=[[0.0]], Q=[[0.3]], R=0.2)
        ll, _ = log_likelihood(m, [0.7], (np.zeros(1), np.array([[5.0]])))
        S = 0.5
        assert ll == pytest.approx(-0.5 * (math.log(2 * math.pi * S) + 0.49 / S), abs=1e-14)

    def test_three_steps_against_dense(self):
        m, init, z = _instance(3, 1, 3)
        ll, _ = log_likelihood(m, z, init)
        assert ll == pytest.approx(dense_loglik(m.A, m.Q, m.R, *init, z), abs=1e-10)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2]), st.integers(1, 6))
    def test_oracle_equivalence(self, seed, d, N):
        m, init, z = _instance(seed, d, N)
        expected = dense_loglik(m.A, m.Q, m.R, *init, z)
        assert log_likelihood(m, z, init)[0] == pytest.approx(expected, abs=1e-8)
        assert fast_log_likelihood(m, z, init) == pytest.approx(expected, abs=1e-8)

    @pytest.mark.parametrize("theta,order", [([2.0, 4e-2, 0.1], 1), ([3.0, 5.0, 2e-2, 5e-2], 2)])
    def test_fast_path_matches_full(self, theta, order):
        m = params_to_discrete(theta, order, 0.01)
        z = simulate(m, 1000, seed=2).observations
        np.testing.assert_allclose(fast_log_likelihood(m, z), log_likelihood(m, z)[0], rtol=1e-11)

    def test_degenerate_innovation(self):
        m = DiscreteModel(A=[[0.5]], Q=[[0.0]], R=0.0)
        with pytest.raises(DegenerateInnovation, match="degenerate innovation variance"):
            log_likelihood(m, [1.0], (np.zeros(1), np.zeros((1, 1))))

    def test_nonfinite_observations(self):
        m = DiscreteModel(A=[[0.5]], Q=[[1.0]], R=1.0)
        with pytest.raises(ValueError):
            log_likelihood(m, [1.0, np.nan])

    def test_innovation_whiteness(self):
        m = params_to_discrete([2.0, 4e-2, 0.1], 1, 0.01)
        z = simulate(m, 10_000, seed=4).observations
        fs = kalman_filter(m, z)
        nis = (z - fs.z_pred) ** 2 / fs.S
        assert 0.95 <= nis.mean() <= 1.05

    def test_covariances_stay_psd(self):
        m = params_to_discrete([7.0, 2.0, 2e-2, 6e-2], 2, 0.01)
        fs = kalman_filter(m, simulate(m, 2000, seed=1).observations)
        for P in (fs.P_pred, fs.P_filt):
            np.testing.assert_array_equal(P, np.swapaxes(P, 1, 2))
            assert np.linalg.eigvalsh(P).min() >= -1e-10
        assert np.all(fs.S > 0)


class TestInit:
    def test_stationary(self):
        m = DiscreteModel(A=[[0.5]], Q=[[0.75]], R=1.0)
        x0, P0 = default_init(m)
        np.testing.assert_array_equal(x0, [0.0])
        np.testing.assert_allclose(P0, [[1.0]])

    def test_near_unit_fallback(self):
        m = DiscreteModel(A=[[1.0]], Q=[[0.1]], R=1.0)
        np.testing.assert_array_equal(default_init(m)[1], [[1e3]])


class TestSmoother:
    def test_single_step_equals_filter(self):
        m, init, z = _instance(1, 2, 1)
        fs = kalman_filter(m, z, init)
        sm = rts_smooth(m, fs)
        np.testing.assert_array_equal(sm.x_smooth, fs.x_filt)
        np.testing.assert_array_equal(sm.P_smooth, fs.P_filt)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2]), st.integers(1, 6))
    def test_oracle_equivalence(self, seed, d, N):
        m, init, z = _instance(seed, d, N)
        sm = rts_smooth(m, kalman_filter(m, z, init))
        mean, cov = dense_posterior(m.A, m.Q, m.R, *init, z)
        blk = lambda i, j: cov[d * i : d * (i + 1), d * j : d * (j + 1)]
        np.testing.assert_allclose(sm.x0_smooth, mean[:d], atol=1e-8)
        np.testing.assert_allclose(sm.P0_smooth, blk(0, 0), atol=1e-8)
        for n in range(1, N + 1):
            np.testing.assert_allclose(sm.x_smooth[n - 1], mean[d * n : d * (n + 1)], atol=1e-8)
            np.testing.assert_allclose(sm.P_smooth[n - 1], blk(n, n), atol=1e-8)
            np.testing.assert_allclose(sm.P_lag[n - 1], blk(n, n - 1), atol=1e-8)

    def test_smoothed_not_larger_than_filtered(self):
        m = params_to_discrete([3.0, 5.0, 2e-2, 5e-2], 2, 0.01)
        fs = kalman_filter(m, simulate(m, 300, seed=8).observations)
        sm = rts_smooth(m, fs)
        for Ps, Pf in zip(sm.P_smooth, fs.P_filt):
            np.testing.assert_allclose(Ps, Ps.T, atol=1e-15)
            assert np.linalg.eigvalsh(Pf - Ps).min() >= -1e-10
            assert np.linalg.eigvalsh(Ps).min() >= -1e-10

    def test_static_state(self):
        m = DiscreteModel(A=[[1.0]], Q=[[0.0]], R=1.0)
        z = np.random.default_rng(42).normal(size=25) + 3.0
        fs = kalman_filter(m, z, (np.zeros(1), np.array([[10.0]])))
        sm = rts_smooth(m, fs)
        np.testing.assert_allclose(sm.x_smooth[:, 0], sm.x_smooth[-1, 0], rtol=1e-10)
        assert np.all(np.diff(fs.P_filt[:, 0, 0]) < 0)


class TestObjective:
    def test_failure_sentinel(self):
        obj = make_objective([1.0, 2.0], 1, 0.01)
        assert obj([-1e6, 1.0, 1.0]) == FAILED_OBJECTIVE
        assert obj([1.0, 0.0, 0.0]) == FAILED_OBJECTIVE
        assert obj([1.0, 1.0, 1.0]) > FAILED_OBJECTIVE

    def test_matches_log_likelihood(self):
        m = params_to_discrete([2.0, 4e-2, 0.1], 1, 0.01)
        z = simulate(m, 200, seed=0).observations
        obj = make_objective(z, 1, 0.01)
        assert obj([2.0, 4e-2, 0.1]) == pytest.approx(log_likelihood(m, z)[0], rel=1e-12)
