import numpy as np
import pytest

from sde_ident.model import DiscreteModel, params_to_discrete
from sde_ident.simulate import Trajectory, default_steps, read_csv, simulate, write_csv


@pytest.fixture(scope="module")
def long_ou():
    model = DiscreteModel(A=[[0.980199]], Q=[[4e-2]], R=0.1)
    return simulate(model, 100_000, seed=11)


class TestSimulate:
    def test_noiseless_zero(self):
        m = DiscreteModel(A=[[0.9, 0.1], [0.0, 0.8]], Q=np.zeros((2, 2)), R=0.0)
        tr = simulate(m, 20, seed=1, x0=[0.0, 0.0])
        np.testing.assert_array_equal(tr.states, 0.0)
        np.testing.assert_array_equal(tr.observations, 0.0)

    def test_no_measurement_noise(self):
        m = params_to_discrete([3.0, 5.0, 2e-2, 0.0], 2, 0.01)
        tr = simulate(m, 50, seed=3)
        np.testing.assert_array_equal(tr.observations, tr.states[0])

    def test_reproducible(self):
        m = params_to_discrete([2.0, 4e-2, 0.1], 1, 0.01)
        a, b = simulate(m, 500, seed=5), simulate(m, 500, seed=5)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.observations, b.observations)
        c = simulate(m, 500, seed=6)
        assert not np.array_equal(a.observations, c.observations)

    def test_stationary_variance(self, long_ou):
        target = 4e-2 / (1 - 0.980199**2)
        assert target == pytest.approx(1.0203, abs=1e-3)
        assert np.var(long_ou.states[0]) == pytest.approx(target, rel=0.03 * 3)

    def test_lag_one_autocorrelation(self, long_ou):
        x = long_ou.states[0]
        x = x - x.mean()
        rho = np.dot(x[1:], x[:-1]) / np.dot(x, x)
        assert abs(rho - 0.980199) < 0.01

    def test_measurement_residual(self, long_ou):
        resid = long_ou.observations - long_ou.states[0]
        assert np.var(resid) == pytest.approx(0.1, rel=0.05)

    def test_unstable_stationary_policy(self):
        m = DiscreteModel(A=[[1.0]], Q=[[1.0]], R=1.0)
        with pytest.raises(ValueError, match="fixed x0"):
            simulate(m, 10, seed=0)
        assert simulate(m, 10, seed=0, x0=[0.0]).N == 10

    def test_default_steps(self):
        assert default_steps(0.01) == 1000
        assert default_steps(5e-3) == 2000

    def test_bad_n(self):
        with pytest.raises(ValueError):
            simulate(DiscreteModel(A=[[0.5]], Q=[[1.0]], R=1.0), 0, seed=0)


class TestCsv:
    def test_roundtrip_bit_exact(self, tmp_path):
        m = params_to_discrete([7.0, 2.0, 2e-2, 6e-2], 2, 0.01)
        tr = simulate(m, 40, seed=9)
        path = tmp_path / "t.csv"
        text = write_csv(tr, path)
        assert text.splitlines()[0] == "n,x1,x2,z"
        back = read_csv(path)
        np.testing.assert_array_equal(back.states, tr.states)
        np.testing.assert_array_equal(back.observations, tr.observations)

    def test_header_first_order(self):
        tr = Trajectory(states=[[1.0, 2.0]], observations=[1.5, 2.5])
        assert write_csv(tr).splitlines() == ["n,x1,z", "1,1,1.5", "2,2,2.5"]

    def test_malformed(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_csv(p)
        p.write_text("n,x1,z\n1,abc,2\n")
        with pytest.raises(ValueError):
            read_csv(p)
