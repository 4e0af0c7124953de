import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sde_ident.consistency import acceptance_region, consistency_report, nees, nees_nis_run
from sde_ident.harness import ORACLE_METHOD, run_study
from sde_ident.kalman import kalman_filter
from sde_ident.model import params_to_discrete
from sde_ident.rng import rng_stream
from sde_ident.simulate import Trajectory, simulate


class TestNees:
    def test_zero_error(self):
        assert nees([0.0], [3.0])[0] == 0.0

    def test_scalar_ratio(self):
        assert nees([2.0], [4.0])[0] == 1.0

    def test_full_inverse_2d(self):
        rng = np.random.default_rng(0)
        L = rng.normal(size=(5, 2, 2))
        P = L @ L.transpose(0, 2, 1) + 0.1 * np.eye(2)
        e = rng.normal(size=(5, 2))
        expected = [ei @ np.linalg.inv(Pi) @ ei for ei, Pi in zip(e, P)]
        np.testing.assert_allclose(nees(e, P), expected, rtol=1e-12)

    def test_near_singular_falls_back(self):
        P = np.array([[[1.0, 1.0], [1.0, 1.0 + 1e-15]]])
        assert np.isfinite(nees(np.array([[1.0, 1.0]]), P)).all()

    def test_run_matches_definition(self):
        m = params_to_discrete([3.0, 5.0, 2e-2, 5e-2], 2, 0.01)
        traj = simulate(m, 50, 2)
        eps, nu = nees_nis_run(traj, m)
        fs = kalman_filter(m, traj.observations)
        e = traj.states[:, 7] - fs.x_filt[7]
        assert eps[7] == pytest.approx(e @ np.linalg.solve(fs.P_filt[7], e), rel=1e-10)
        assert nu[7] == pytest.approx((traj.observations[7] - fs.z_pred[7]) ** 2 / fs.S[7], rel=1e-14)

    def test_dimension_mismatch(self):
        traj = Trajectory(np.zeros((2, 5)), np.zeros(5))
        with pytest.raises(ValueError):
            nees_nis_run(traj, params_to_discrete([2.0, 0.1, 0.1], 1, 0.01))


class TestRegion:
    @pytest.mark.parametrize(
        "dof,N,expected",
        [(1, 1000, (0.993, 1.007)), (1, 2000, (0.995, 1.005)), (2, 1000, (1.990, 2.010))],
    )
    def test_published_regions(self, dof, N, expected):
        lo, hi = acceptance_region(dof, 100, N, 0.9)
        assert (round(lo, 3), round(hi, 3)) == expected

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from([1, 2]), st.integers(10, 200), st.integers(1000, 5000))
    def test_nearly_symmetric_for_large_k(self, dof, n_mc, N):
        lo, hi = acceptance_region(dof, n_mc, N)
        # chi-squared skew shifts the midpoint by (2/3)(z^2 - 1) / (n_mc N) ~ 1.14 / (n_mc N)
        assert abs(0.5 * (lo + hi) - dof) <= 1.2 / (n_mc * N)
        if n_mc * N >= 12000:
            assert abs(0.5 * (lo + hi) - dof) <= 1e-4
        assert lo < dof < hi

    def test_wider_at_higher_confidence(self):
        a = acceptance_region(1, 10, 100, 0.9)
        b = acceptance_region(1, 10, 100, 0.99)
        assert b[0] < a[0] and b[1] > a[1]

    def test_validation(self):
        with pytest.raises(ValueError):
            acceptance_region(0, 1, 1)
        with pytest.raises(ValueError):
            acceptance_region(1, 1, 1, 1.0)


class TestTrueParameterFilter:
    def test_mean_nees_concentrates(self):
        m = params_to_discrete([2.0, 4e-2, 0.1], 1, 0.01)
        n_mc, N = 10, 1000
        runs = [nees_nis_run(simulate(m, N, 0, rng=rng_stream(3, "c", j)), m) for j in range(n_mc)]
        rep = consistency_report([r[0] for r in runs], [r[1] for r in runs], d=1)
        bound = 4 * math.sqrt(2 / (n_mc * N))
        assert abs(rep.nees_mean - 1) <= bound
        assert abs(rep.nis_mean - 1) <= bound
        assert rep.n_mc == n_mc and rep.N == N
        d = rep.to_dict()
        assert d["nees_pass"] == rep.nees_pass and len(d["nees_region"]) == 2

    def test_second_order_nees_unbiased(self):
        # slow second-order errors are strongly autocorrelated in time, so the
        # spread is judged from the run means rather than an i.i.d. bound
        m = params_to_discrete([7.0, 2.0, 2e-2, 6e-2], 2, 0.01)
        runs = [nees_nis_run(simulate(m, 1000, 0, rng=rng_stream(4, "c", j)), m) for j in range(40)]
        means = np.array([r[0].mean() for r in runs])
        assert abs(means.mean() - 2) <= 4 * means.std() / math.sqrt(len(means))

    def test_report_shape_errors(self):
        with pytest.raises(ValueError):
            consistency_report(np.ones((2, 3)), np.ones((2, 4)), d=1)


class TestStudyLevelBias:
    def test_true_parameter_means_center_on_one(self):
        nees_means, nis_means = [], []
        for s in range(20):
            summary = run_study("a", [ORACLE_METHOD], 20, seed=s).summary[ORACLE_METHOD]
            nees_means.append(summary["nees"])
            nis_means.append(summary["nis"])
        for means in (np.array(nees_means), np.array(nis_means)):
            assert abs(means.mean() - 1) <= 4 * means.std() / math.sqrt(len(means))
