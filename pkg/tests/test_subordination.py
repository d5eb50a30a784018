import math

import numpy as np
import pytest
from scipy import stats

from rsergodic import errors, rates, sde, subordination as sub
from rsergodic.rng import stream

KINDS = {
    "drift": sub.drift_subordinator(1.5),
    "stable": sub.stable_subordinator(0.6),
    "cpp": sub.cpp_subordinator(2.0, [(0.5, 1.0), (2.0, 1.0)], beta=0.3),
}


class TestSpec:
    @pytest.mark.parametrize("kw", [
        {"kind": "stable", "alpha": 1.0},
        {"kind": "stable", "alpha": 0.0},
        {"kind": "drift", "beta": -1.0},
        {"kind": "cpp", "rate": -1.0, "jump_atoms": ((1.0, 1.0),)},
        {"kind": "cpp", "rate": 1.0, "jump_atoms": ((0.0, 1.0),)},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            sub.SubordinatorSpec(**kw)

    def test_unknown_kind(self):
        with pytest.raises(errors.ConfigError):
            sub.SubordinatorSpec("gamma")

    def test_from_config(self):
        s = sub.subordinator_from_config({"kind": "cpp", "rate": 3, "jumps": [[1, 1], [2, 3]]})
        assert s.rate == 3.0
        assert s.jump_atoms == ((1.0, 0.25), (2.0, 0.75))
        assert s.describe()["kind"] == "cpp"


class TestBernstein:
    @pytest.mark.parametrize("u", [0.1, 1.0, 7.0])
    def test_drift(self, u):
        assert sub.bernstein_phi(sub.drift_subordinator(1.0), u) == pytest.approx(u)

    def test_stable(self):
        assert sub.bernstein_phi(sub.stable_subordinator(0.5), 4.0) == pytest.approx(2.0)

    @pytest.mark.parametrize("u", [0.5, 1.0, 3.0])
    def test_unit_atom(self, u):
        s = sub.cpp_subordinator(1.0, [(1.0, 1.0)])
        assert sub.bernstein_phi(s, u) == pytest.approx(1 - math.exp(-u))

    def test_density_quadrature(self):
        s = sub.SubordinatorSpec("cpp", rate=2.0, jump_density=lambda y: math.exp(-y),
                                 jump_sampler=lambda rng, n: rng.exponential(1.0, n))
        # exponential jumps: E exp(-uJ) = 1 / (1 + u)
        assert sub.bernstein_phi(s, 1.0) == pytest.approx(2.0 * 0.5, rel=1e-8)

    @pytest.mark.parametrize("u", [0.0, -1.0])
    def test_nonpositive(self, u):
        with pytest.raises(errors.NonPositiveArgument):
            sub.bernstein_phi(KINDS["stable"], u)


class TestSampling:
    def test_drift_is_deterministic(self):
        assert sub.sample_subordinator(sub.drift_subordinator(2.0), 3.0, stream(0)) == 6.0

    def test_negative_time(self):
        with pytest.raises(errors.NegativeTime):
            sub.sample_subordinator(KINDS["stable"], -1.0)

    def test_stable_half_median(self):
        s = sub.sample_subordinator(sub.stable_subordinator(0.5), 1.0, stream(1, "levy"), 100_000)
        target = stats.levy(scale=0.5).median()
        # sigma of the sample median: sqrt(p(1-p)/n) / density at the median
        se = 0.5 / math.sqrt(s.size) / stats.levy(scale=0.5).pdf(target)
        assert abs(np.median(s) - target) <= 3 * se

    def test_cpp_count_mean(self):
        s = sub.cpp_subordinator(1.0, [(1.0, 1.0)])
        n = sub.sample_subordinator(s, 10.0, stream(2), 10_000)
        assert abs(n.mean() - 10.0) <= 3 * n.std(ddof=1) / math.sqrt(n.size)
        np.testing.assert_array_equal(n, np.round(n))

    @pytest.mark.parametrize("name", list(KINDS))
    def test_nonnegative_and_monotone_paths(self, name):
        path = sub.sample_subordinator_path(KINDS[name], np.linspace(0, 5, 26), stream(3, name),
                                            200)
        assert path.shape == (200, 26)
        assert np.all(path >= 0)
        assert np.all(np.diff(path, axis=1) >= 0)

    def test_self_similarity(self):
        a = 0.7
        s = sub.stable_subordinator(a)
        s1 = sub.sample_subordinator(s, 1.0, stream(4, "one"), 10_000)
        s2 = sub.sample_subordinator(s, 2.0, stream(4, "two"), 10_000) / 2 ** (1 / a)
        assert stats.ks_2samp(s1, s2).pvalue > 0.01

    @pytest.mark.parametrize("name", list(KINDS))
    @pytest.mark.parametrize("u", [0.5, 1.0, 2.0])
    def test_laplace(self, name, u):
        spec = KINDS[name]
        s = sub.sample_subordinator(spec, 1.0, stream(5, name, str(u)), 20_000)
        e = np.exp(-u * s)
        se = e.std(ddof=1) / math.sqrt(e.size)
        assert abs(e.mean() - math.exp(-sub.bernstein_phi(spec, u))) <= max(3 * se, 1e-12)


class TestSubordinateRate:
    def test_drift_only_returns_r(self):
        times = np.array([1.0, 2.0, 4.0])
        out = sub.subordinate_rate(lambda t: t ** 2, sub.drift_subordinator(1.0), times, 100)
        np.testing.assert_allclose(out.estimate, times ** 2)

    def test_stable_slope(self):
        times = np.geomspace(1, 1000, 7)
        out = sub.subordinate_rate(np.sqrt, sub.stable_subordinator(0.8), times, 20_000,
                                   stream(6))
        fit = rates.rate_fit(times, out.estimate)
        assert fit.slope == pytest.approx(0.625, abs=0.05)

    def test_moment_blowup(self):
        with pytest.raises(errors.MomentBlowup):
            sub.subordinate_rate(lambda t: t, sub.stable_subordinator(0.5), [1.0, 10.0], 10_000,
                                 stream(7))

    def test_needs_100_draws(self):
        with pytest.raises(ValueError):
            sub.subordinate_rate(np.sqrt, KINDS["stable"], [1.0], 50)

    def test_rows(self):
        out = sub.subordinate_rate(np.sqrt, KINDS["cpp"], [1.0, 2.0], 200, stream(8))
        rows = list(out.rows())
        assert len(rows) == 2 and rows[0]["n"] == 200
        assert out.batch_means.shape == (2, sub.N_BATCHES)


class TestSubordinatePath:
    @pytest.fixture
    def traj(self):
        return sde.integrate(sde.noise_example(), 0.5, 0, 10.0, 0.01, stream(9))

    def test_identity_time_change(self, traj):
        t = np.linspace(0, 4, 9)
        out = sub.subordinate_path(traj, sub.drift_subordinator(1.0), t)
        np.testing.assert_allclose(out["x"], traj.value_at(t))

    def test_dilation(self, traj):
        t = np.linspace(0, 4, 9)
        out = sub.subordinate_path(traj, sub.drift_subordinator(2.0), t)
        np.testing.assert_allclose(out["S"], 2 * t)
        np.testing.assert_allclose(out["x"], traj.value_at(2 * t))
        np.testing.assert_array_equal(out["regimes"], traj.regime_at(2 * t))

    def test_horizon_exceeded(self, traj):
        with pytest.raises(errors.HorizonExceeded):
            sub.subordinate_path(traj, sub.drift_subordinator(2.0), [6.0])
