import numpy as np
import pytest
from scipy import stats

from gumbolt.rbm import (
    PcdChains,
    Rbm,
    advance_chains,
    energy,
    enumerate_states,
    exact_log_partition,
    exact_probabilities,
    gibbs_sweep,
    pcd_negative_phase,
)


def scalar_loop_energy(rbm, v1, v2):
    """Independent oracle: plain double loops over the energy terms."""
    acc = 0.0
    for i in range(rbm.n1):
        acc += rbm.a[i] * v1[i]
    for j in range(rbm.n2):
        acc += rbm.b[j] * v2[j]
    for j in range(rbm.n2):
        for i in range(rbm.n1):
            acc += v2[j] * rbm.w[j, i] * v1[i]
    return -acc


class TestEnergy:
    def test_zero_parameters(self):
        rbm = Rbm.zeros(3, 2)
        assert energy(rbm, np.array([1.0, 0.5, 0.0]), np.array([1.0, 1.0])) == 0.0

    def test_direct_substitution(self):
        rbm = Rbm(np.array([1.0]), np.array([2.0]), np.array([[3.0]]))
        assert energy(rbm, np.array([1.0]), np.array([1.0])) == -6.0

    def test_relaxed_inputs_match_scalar_loop(self):
        rng = np.random.default_rng(0)
        rbm = Rbm.random(3, 3, rng, weight_scale=1.0, bias_scale=1.0)
        v1 = np.full(3, 0.5)
        v2 = np.full(3, 0.5)
        np.testing.assert_allclose(
            energy(rbm, v1, v2), scalar_loop_energy(rbm, v1, v2), rtol=1e-13
        )

    def test_batched_rows(self):
        rng = np.random.default_rng(1)
        rbm = Rbm.random(4, 3, rng)
        v1 = rng.uniform(size=(5, 4))
        v2 = rng.uniform(size=(5, 3))
        batched = energy(rbm, v1, v2)
        for i in range(5):
            np.testing.assert_allclose(batched[i], energy(rbm, v1[i], v2[i]))

    def test_dimension_mismatch(self):
        rbm = Rbm.zeros(2, 2)
        with pytest.raises(ValueError, match="do not match"):
            energy(rbm, np.zeros(3), np.zeros(2))

    def test_multilinear_in_each_coordinate(self):
        """Three collinear points along any coordinate stay collinear in E."""
        rng = np.random.default_rng(2)
        rbm = Rbm.random(3, 3, rng, weight_scale=1.0, bias_scale=0.5)
        for _ in range(20):
            v1 = rng.uniform(size=3)
            v2 = rng.uniform(size=3)
            coord = rng.integers(0, 6)
            values = []
            for t in (0.0, 0.5, 1.0):
                w1, w2 = v1.copy(), v2.copy()
                if coord < 3:
                    w1[coord] = t
                else:
                    w2[coord - 3] = t
                values.append(energy(rbm, w1, w2))
            np.testing.assert_allclose(values[1], 0.5 * (values[0] + values[2]), atol=1e-12)


class TestExactLogPartition:
    def test_zero_parameters_1_1(self):
        assert exact_log_partition(Rbm.zeros(1, 1)) == pytest.approx(np.log(4.0), abs=1e-12)

    def test_factorized_single_unit(self):
        rbm = Rbm(np.array([1.0]), np.zeros(0), np.zeros((0, 1)))
        assert exact_log_partition(rbm) == pytest.approx(np.log(1.0 + np.e), abs=1e-12)

    def test_matches_joint_enumeration_4_4(self):
        rng = np.random.default_rng(3)
        rbm = Rbm.random(4, 4, rng, weight_scale=0.8, bias_scale=0.5)
        total = -np.inf
        for v1 in enumerate_states(4):
            for v2 in enumerate_states(4):
                total = np.logaddexp(total, -energy(rbm, v1, v2))
        assert exact_log_partition(rbm) == pytest.approx(total, abs=1e-10)

    def test_probability_normalization(self):
        rng = np.random.default_rng(4)
        for n1, n2 in ((2, 3), (4, 4), (6, 6)):
            rbm = Rbm.random(n1, n2, rng, weight_scale=0.7, bias_scale=0.3)
            s1 = enumerate_states(n1)
            s2 = enumerate_states(n2)
            z = 0.0
            for v1 in s1:
                z += np.sum(np.exp(-energy(rbm, np.tile(v1, (len(s2), 1)), s2)))
            assert np.exp(exact_log_partition(rbm)) == pytest.approx(z, rel=1e-12)

    def test_enumeration_guard(self):
        with pytest.raises(ValueError, match="partition"):
            exact_log_partition(Rbm.zeros(30, 30))


class TestGibbs:
    def test_zero_model_conditional_mean(self):
        rbm = Rbm.zeros(4, 4)
        chains = PcdChains.initialize(rbm, 2000, np.random.default_rng(5))
        advance_chains(rbm, chains, 20)
        for mean in (chains.z1.mean(), chains.z2.mean()):
            assert abs(mean - 0.5) < 3.0 * 0.5 / np.sqrt(2000 * 4)

    def test_saturated_bias(self):
        rbm = Rbm(np.zeros(1), np.array([10.0]), np.zeros((1, 1)))
        chains = PcdChains.initialize(rbm, 1, np.random.default_rng(6))
        hits = 0
        for _ in range(1000):
            gibbs_sweep(rbm, chains)
            hits += int(chains.z2[0, 0])
        assert hits / 1000 > 0.99

    def test_stationary_distribution_chi_square(self):
        """Long-run visit frequencies match the exact Boltzmann distribution."""
        rng = np.random.default_rng(7)
        rbm = Rbm.random(3, 3, rng, weight_scale=0.6, bias_scale=0.3)
        _, _, probs = exact_probabilities(rbm)
        flat_p = probs.reshape(-1)
        n_chains, n_sweeps, thin = 100, 10_000, 10
        chains = PcdChains.initialize(rbm, n_chains, np.random.default_rng(8))
        advance_chains(rbm, chains, 100)
        counts = np.zeros(64)
        pow1 = 1 << np.arange(2, -1, -1)
        for sweep in range(n_sweeps // thin):
            advance_chains(rbm, chains, thin)
            idx = (chains.z1 @ pow1) * 8 + chains.z2 @ pow1
            counts += np.bincount(idx, minlength=64)
        total = counts.sum()
        chi2 = np.sum((counts - total * flat_p) ** 2 / (total * flat_p))
        p_value = stats.chi2.sf(chi2, df=63)
        assert p_value > 0.001

    def test_long_run_frequencies_within_three_se(self):
        rng = np.random.default_rng(9)
        rbm = Rbm.random(2, 2, rng, weight_scale=0.8, bias_scale=0.4)
        _, _, probs = exact_probabilities(rbm)
        flat_p = probs.reshape(-1)
        chains = PcdChains.initialize(rbm, 500, np.random.default_rng(10))
        advance_chains(rbm, chains, 200)
        counts = np.zeros(16)
        pow1 = 1 << np.arange(1, -1, -1)
        for _ in range(200):
            advance_chains(rbm, chains, 5)
            idx = (chains.z1 @ pow1) * 4 + chains.z2 @ pow1
            counts += np.bincount(idx, minlength=16)
        n = counts.sum()
        freq = counts / n
        se = np.sqrt(flat_p * (1 - flat_p) / n)
        assert np.all(np.abs(freq - flat_p) < 3.5 * se + 1e-9)


class TestPcdNegativePhase:
    def test_zero_model_marginals(self):
        rbm = Rbm.zeros(3, 3)
        chains = PcdChains.initialize(rbm, 1000, np.random.default_rng(11))
        grads = pcd_negative_phase(rbm, chains, 50)
        se = 0.5 / np.sqrt(1000)
        assert np.all(np.abs(grads["grad_a"] - 0.5) < 3 * se)
        assert np.all(np.abs(grads["grad_b"] - 0.5) < 3 * se)

    def test_matches_finite_difference_of_exact_log_z(self):
        from gumbolt.verify import logz_gradient_check

        check = logz_gradient_check(seed=21, n_chains=600, n_sweeps=400)
        assert check.passed, check.detail

    def test_chains_persist(self):
        rbm = Rbm.zeros(2, 2)
        chains = PcdChains.initialize(rbm, 4, np.random.default_rng(12))
        before = chains.z1.copy()
        pcd_negative_phase(rbm, chains, 3)
        assert chains.z1.shape == before.shape  # same object advanced in place
        assert chains.n_chains == 4

    def test_sweep_count_validated(self):
        rbm = Rbm.zeros(2, 2)
        chains = PcdChains.initialize(rbm, 4, np.random.default_rng(13))
        with pytest.raises(ValueError):
            pcd_negative_phase(rbm, chains, 0)


def test_extrema_attained_at_vertices():
    from gumbolt.verify import extrema_suite

    check = extrema_suite(30)
    assert check.passed, check.detail
