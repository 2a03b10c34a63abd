import numpy as np
import pytest

from gumbolt.partition import (
    LadderError,
    TemperingLadder,
    bridge_log_ratio,
    estimate_log_z,
    pilot_tune_ladder,
)
from gumbolt.rbm import Rbm, exact_log_partition, exact_probabilities


class TestLadderInvariants:
    def test_requires_full_span(self):
        rbm = Rbm.zeros(2, 2)
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="span"):
            TemperingLadder.initialize(rbm, [0.0, 0.5], 4, rng)

    def test_requires_increasing(self):
        rbm = Rbm.zeros(2, 2)
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="increasing"):
            TemperingLadder.initialize(rbm, [0.0, 0.7, 0.5, 1.0], 4, rng)


class TestPilotTuning:
    def test_zero_model_needs_two_rungs(self):
        ladder = pilot_tune_ladder(Rbm.zeros(4, 4), seed=0)
        np.testing.assert_array_equal(ladder.betas, [0.0, 1.0])
        assert ladder.pilot_rates[0] == 1.0

    def test_moderate_model_rates_in_band(self):
        rbm = Rbm.random(10, 10, np.random.default_rng(1), weight_scale=0.5)
        ladder = pilot_tune_ladder(rbm, seed=2)
        assert np.all(ladder.pilot_rates >= 0.35)
        assert np.all(ladder.pilot_rates <= 0.65)

    def test_forced_failure_reports_rates(self):
        rbm = Rbm.random(6, 6, np.random.default_rng(3), weight_scale=4.0)
        with pytest.raises(LadderError, match="rates"):
            pilot_tune_ladder(rbm, max_betas=2, seed=4)

    def test_rejects_bad_target(self):
        with pytest.raises(ValueError):
            pilot_tune_ladder(Rbm.zeros(2, 2), target_rate=1.5)


class TestBridge:
    def test_identical_distributions_give_zero(self):
        rng = np.random.default_rng(5)
        u = rng.standard_normal(2000)
        v = rng.standard_normal(2000)
        ratio = bridge_log_ratio(u, u, v, v)
        assert abs(ratio) < 0.1

    def test_known_gaussian_ratio(self):
        """Potentials u_A = x^2/2, u_B = x^2: log(Z_B/Z_A) = -log(sqrt(2))."""
        rng = np.random.default_rng(6)
        xa = rng.normal(scale=1.0, size=200_000)
        xb = rng.normal(scale=np.sqrt(0.5), size=200_000)
        est = bridge_log_ratio(0.5 * xa**2, xa**2, xb**2, 0.5 * xb**2)
        assert est == pytest.approx(-0.5 * np.log(2.0), abs=5e-3)


class TestEstimateLogZ:
    def test_zero_model_is_exact(self):
        rbm = Rbm.zeros(4, 4)
        ladder = pilot_tune_ladder(rbm, seed=7)
        est = estimate_log_z(rbm, ladder, 200, 500, 3, seed=7)
        assert est.mean == pytest.approx(8 * np.log(2.0), abs=0.01)
        assert est.std <= 0.01

    def test_matches_enumeration_on_8_8(self):
        rbm = Rbm.random(8, 8, np.random.default_rng(8), weight_scale=0.5)
        exact = exact_log_partition(rbm)
        ladder = pilot_tune_ladder(rbm, seed=9)
        est = estimate_log_z(rbm, ladder, 1000, 4000, 4, seed=10)
        assert abs(est.mean - exact) <= 0.05
        assert est.runs.shape == (4,)

    def test_validates_settings(self):
        rbm = Rbm.zeros(2, 2)
        ladder = pilot_tune_ladder(rbm, seed=11)
        with pytest.raises(ValueError):
            estimate_log_z(rbm, ladder, 0, 10, 1)


class TestSamplerInvariants:
    def test_beta_zero_rung_is_uniform(self):
        """The base rung must draw fair coins regardless of the model."""
        from gumbolt.partition import _sweep

        rbm = Rbm.random(4, 4, np.random.default_rng(12), weight_scale=1.5, bias_scale=1.0)
        ladder = TemperingLadder.initialize(
            rbm, [0.0, 0.5, 1.0], 64, np.random.default_rng(13)
        )
        total = np.zeros(())
        n_draws = 0
        for _ in range(50):
            _sweep(rbm, ladder, 10, exchange=False)
            total = total + ladder.z1[0].sum() + ladder.z2[0].sum()
            n_draws += ladder.z1[0].size + ladder.z2[0].size
        mean = total / n_draws
        assert abs(mean - 0.5) < 3 * 0.5 / np.sqrt(n_draws)

    def test_exchange_preserves_target_marginal(self):
        """With exchange on, the beta = 1 rung still samples the model:

        empirical state frequencies match enumeration within 3.5 SE."""
        from gumbolt.partition import _sweep

        rbm = Rbm.random(3, 3, np.random.default_rng(14), weight_scale=0.8, bias_scale=0.3)
        _, _, probs = exact_probabilities(rbm)
        flat_p = probs.reshape(-1)
        ladder = pilot_tune_ladder(rbm, seed=15)
        work = TemperingLadder.initialize(
            rbm, ladder.betas, 100, np.random.default_rng(16)
        )
        _sweep(rbm, work, 200)
        counts = np.zeros(64)
        pow1 = 1 << np.arange(2, -1, -1)
        for _ in range(1000):
            _sweep(rbm, work, 2)
            idx = (work.z1[-1] @ pow1) * 8 + work.z2[-1] @ pow1
            counts += np.bincount(idx, minlength=64)
        freq = counts / counts.sum()
        se = np.sqrt(flat_p * (1 - flat_p) / counts.sum())
        assert np.all(np.abs(freq - flat_p) < 3.5 * se + 1e-9)

    def test_error_shrinks_with_more_sweeps(self):
        """Median |error| over random models strictly drops when the sweep

        budget grows tenfold."""
        errors = {400: [], 4000: []}
        for trial in range(10):
            rbm = Rbm.random(6, 6, np.random.default_rng([17, trial]), weight_scale=0.5)
            exact = exact_log_partition(rbm)
            ladder = pilot_tune_ladder(rbm, seed=trial)
            for sweeps in (400, 4000):
                est = estimate_log_z(rbm, ladder, 200, sweeps, 1, seed=trial * 10 + sweeps)
                errors[sweeps].append(abs(est.mean - exact))
        assert np.median(errors[4000]) < np.median(errors[400])
