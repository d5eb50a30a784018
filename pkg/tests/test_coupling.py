import numpy as np
import pytest
from scipy import stats

from rsergodic import chain, coupling, distance, errors, rates, sde
from rsergodic.rng import stream


def linear_model():
    gen = chain.validate_generator([[-1.0, 1.0], [1.0, -1.0]])
    return sde.RSModel(1, 1, lambda x, i: -x, lambda x, i: np.ones((1, 1)), gen)


class TestCouple:
    def test_requires_state_free_noise(self):
        with pytest.raises(errors.UnsupportedModel):
            coupling.couple(sde.degenerate_example(), ([0, 0], 0), ([1, 1], 1), 1.0, 0.1)

    def test_requires_state_free_switching(self, sym):
        sd = chain.StateDependentGenerator.constant(sym)
        m = sde.RSModel(1, 1, lambda x, i: -x, lambda x, i: np.ones((1, 1)), sd)
        with pytest.raises(errors.UnsupportedModel):
            coupling.couple(m, (0.0, 0), (1.0, 1), 1.0, 0.1)

    def test_regimes_agree_after_tau(self):
        c = coupling.couple(sde.noise_example(), (1.0, 0), (-1.0, 1), 10.0, 0.01, stream(1, "c"))
        after = c.path_a.times >= c.tau_ij
        np.testing.assert_array_equal(c.path_a.regimes[after], c.path_b.regimes[after])
        assert c.path_b.regimes[0] == 1

    def test_paths_merge_and_stay_merged(self):
        c = coupling.couple(sde.noise_example(), (1.0, 0), (-1.0, 1), 80.0, 0.01, stream(2, "m"))
        assert np.isfinite(c.tau_full)
        after = c.path_a.times >= c.tau_full
        np.testing.assert_array_equal(c.path_a.x[after], c.path_b.x[after])

    def test_equal_starts_merge_immediately(self):
        c = coupling.couple(sde.noise_example(), (0.5, 1), (0.5, 1), 1.0, 0.1, stream(0))
        assert c.tau_ij == 0.0 and c.tau_full == 0.0
        np.testing.assert_array_equal(c.path_a.x, c.path_b.x)

    def test_step_too_large(self):
        with pytest.raises(errors.StepTooLarge):
            coupling.couple(sde.noise_example(), (0.0, 0), (1.0, 1), 1.0, 2.0)


class TestCoupledBatch:
    def test_marginal_law_is_preserved(self):
        # the coupled second path is a copy of the process started at (y, j)
        m = sde.noise_example()
        b = coupling.coupled_batch(m, (1.0, 0), (-1.0, 1), 2.0, 0.01, 10_000, stream(3, "ks"))
        ind = sde.simulate_batch(m, -1.0, 1, 2.0, 0.01, 10_000, stream(4, "ks"))
        assert stats.ks_2samp(b.xb[-1, :, 0], ind.x[-1, :, 0]).pvalue > 0.01

    def test_first_path_law_is_preserved(self):
        m = sde.noise_example()
        b = coupling.coupled_batch(m, (1.0, 0), (-1.0, 1), 2.0, 0.01, 10_000, stream(5, "ks"))
        ind = sde.simulate_batch(m, 1.0, 0, 2.0, 0.01, 10_000, stream(6, "ks"))
        assert stats.ks_2samp(b.xa[-1, :, 0], ind.x[-1, :, 0]).pvalue > 0.01

    def test_merged_pairs_are_identical(self):
        b = coupling.coupled_batch(sde.noise_example(), (1.0, 0), (-1.0, 1), 60.0, 0.01, 300,
                                   stream(7, "merge"), record_times=[30.0, 60.0])
        done = b.tau_full <= 30.0
        assert done.mean() > 0.2
        np.testing.assert_array_equal(b.xa[0, done], b.xb[0, done])
        np.testing.assert_array_equal(b.ra[0, done], b.rb[0, done])

    def test_w1_lower_bounds_coupling(self):
        b = coupling.coupled_batch(sde.noise_example(), (1.0, 0), (-1.0, 1), 1.0, 0.01, 2000,
                                   stream(8))
        xa, xb = b.xa[-1, :, 0], b.xb[-1, :, 0]
        assert distance.empirical_w1_1d(xa, xb) <= np.mean(np.abs(xa - xb))

    def test_captures_positions_at_tau(self):
        b = coupling.coupled_batch(sde.ode_example(), (1.0, 0), (-1.0, 1), 20.0, 0.01, 200,
                                   stream(9), capture_tau_ij=True)
        seen = np.isfinite(b.x_at_tau_ij[0, :, 0])
        assert seen.mean() > 0.99


class TestDecayCurve:
    def test_starts_at_rho(self):
        cur = coupling.distance_decay_curve(sde.ode_example(), (1.0, 0), (-1.0, 1),
                                            distance.identity_profile(), 1.0, [0.0, 1.0], 200,
                                            0.01, stream(0))
        assert cur.estimate[0] == pytest.approx(3.0)
        assert cur.stderr[0] == 0.0

    def test_ode_example_decays(self):
        cur = coupling.distance_decay_curve(sde.ode_example(), (1.0, 0), (-1.0, 1),
                                            distance.capped_profile(), 1.0, [1.0, 5.0, 20.0], 1000,
                                            0.01, stream(1))
        assert np.all(np.diff(cur.estimate) < 0)
        rows = list(cur.rows())
        assert rows[0]["n"] == 1000 and set(rows[0]) == {"t", "estimate", "stderr", "n"}

    def test_p_norm(self):
        samples = np.array([[1.0, 3.0]])
        cur = coupling.DecayCurve.from_samples([1.0], samples, p=2.0)
        assert cur.estimate[0] == pytest.approx(np.sqrt(5.0))

    def test_bad_profile(self):
        bad = distance.RhoProfile(lambda u: u ** 2)
        with pytest.raises(errors.InvalidProfile):
            coupling.distance_decay_curve(sde.ode_example(), (1.0, 0), (-1.0, 1), bad, 1.0,
                                          [1.0], 100, 0.1)

    def test_p_below_one(self):
        with pytest.raises(ValueError):
            coupling.distance_decay_curve(sde.ode_example(), (1.0, 0), (-1.0, 1),
                                          distance.identity_profile(), 0.5, [1.0], 100, 0.1)


class TestFlatness:
    @pytest.fixture
    def psi2(self):
        return rates.psi_power(2.0)

    def test_constant_drift(self, psi2):
        r = coupling.flatness_constant(sde.ode_example(b=1.0), distance.identity_profile(), psi2, 0)
        assert r.Gamma == 0.0 and not r.violated

    def test_quadratic_drift(self, psi2):
        r = coupling.flatness_constant(sde.ode_example(), distance.identity_profile(), psi2, 1)
        assert r.Gamma == pytest.approx(-0.5, abs=1e-12)
        x, y = r.witness
        assert x[0] == pytest.approx(-y[0])

    def test_linear_drift_linear_psi(self):
        r = coupling.flatness_constant(linear_model(), distance.identity_profile(),
                                       rates.psi_linear(1.0), 0)
        assert r.Gamma == pytest.approx(-1.0, abs=1e-12)

    def test_violation_is_flagged(self):
        gen = chain.validate_generator([[0.0]])
        m = sde.RSModel(1, 1, lambda x, i: x, lambda x, i: np.zeros((1, 1)), gen)
        r = coupling.flatness_constant(m, distance.identity_profile(), rates.psi_linear(1.0), 0)
        assert r.violated and r.Gamma == 0.0 and r.raw_max == pytest.approx(1.0)

    def test_degenerate_probe(self, psi2):
        with pytest.raises(errors.DegenerateProbe):
            coupling.flatness_constant(sde.ode_example(), distance.identity_profile(), psi2, 1,
                                       (np.array([[1.0]]), np.array([[1.0]])))

    @pytest.mark.parametrize("eta, delta", [(1.0, 1.0), (0.5, 2.0)])
    def test_delta(self, eta, delta):
        assert coupling.delta_constant(distance.identity_profile(), eta) == pytest.approx(delta)

    def test_delta_bounded_profile(self):
        assert coupling.delta_constant(distance.capped_profile(1.0), 2.0) == 0.0

    def test_thresholded(self, psi2):
        r = coupling.flatness_constant_thresholded(sde.noise_example(), distance.identity_profile(),
                                                   psi2, 0.5, 1)
        assert r.Gamma <= -0.5 + 1e-12
        assert r.delta == pytest.approx(2.0)
        assert r.above_threshold_max <= 0

    def test_threshold_too_small(self, psi2):
        with pytest.raises(errors.ThresholdTooSmall):
            coupling.flatness_constant_thresholded(sde.noise_example(),
                                                   distance.identity_profile(), psi2, 0.0, 1)

    def test_certificate(self, psi2):
        cert = coupling.flatness_certificate(sde.ode_example(), distance.identity_profile(), psi2)
        np.testing.assert_allclose(cert.Gamma, [0.0, -0.5], atol=1e-12)
        assert cert.mixture == pytest.approx(-0.25)
        assert cert.feasible
        assert rates.predicted_polynomial_constant(cert.Gamma, cert.lam, 2.0) == pytest.approx(8.0)
        assert cert.summary()["kind"] == "wasserstein-flatness"

    def test_multidimensional_probes(self):
        gen = chain.validate_generator([[-1.0, 1.0], [1.0, -1.0]])
        m = sde.RSModel(2, 2, lambda x, i: -x, lambda x, i: np.eye(2), gen)
        r = coupling.flatness_constant(m, distance.identity_profile(), rates.psi_linear(1.0), 0)
        assert r.Gamma == pytest.approx(-1.0)

    def test_unbounded_constant_is_an_estimate(self):
        est = coupling.unbounded_constant_estimate(sde.ode_example(), (1.0, 0), (-1.0, 1),
                                                   distance.identity_profile(), 1.0, [0.0, -0.5],
                                                   2.0, 500, 0.01, 20.0, stream(0))
        assert est["is_estimate"]
        assert est["delta"] == pytest.approx(1.0)
        assert est["bounded_constant"] == pytest.approx(8.0)
        assert est["moment_factor"] >= 1.0
