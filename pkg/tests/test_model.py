import numpy as np
import pytest

from gumbolt.model import GumboltVae, StructureSpec
from gumbolt.rbm import Rbm, energy, enumerate_states, exact_log_partition
from gumbolt.relaxation import discretize, log_pmf_from_logits, relax


def small_model(seed=3, hierarchies=1, zeros=False):
    symbols = ("-",) if hierarchies == 1 else ("-", "-")
    spec = StructureSpec(symbols, 2, 2, hidden_width=8)
    return GumboltVae(
        spec,
        n_pixels=4,
        init_rng=None if zeros else np.random.default_rng(seed),
        init="zeros" if zeros else "glorot",
        encoder_batch_norm=False,
        decoder_batch_norm=False,
    )


class TestStructureSpec:
    def test_parse_variants(self):
        assert StructureSpec.parse("-").hierarchies == 1
        assert StructureSpec.parse("~ ~").hierarchies == 2
        assert StructureSpec.parse("− −").symbols == ("-", "-")

    def test_default_latent_sizes(self):
        assert (StructureSpec.parse("~").n1, StructureSpec.parse("~").n2) == (100, 100)
        assert (StructureSpec.parse("~~").n1, StructureSpec.parse("~~").n2) == (200, 200)

    def test_rejects_garbage(self):
        with pytest.raises(ValueError):
            StructureSpec.parse("~ ~ ~")


class TestEncode:
    def test_zero_parameters_give_half_means(self):
        model = small_model(zeros=True)
        from gumbolt.autodiff import Graph

        g = Graph()
        x = g.constant(np.zeros((3, 4)))
        zeta1, zeta2, _ = model.encode(g, x, tau=0.5, rng=np.random.default_rng(0), k=1)
        # zero logits: relaxed values are sigmoid(logit(rho)/2), mean 0.5
        assert zeta1.value.shape == (3, 2)

    def test_tau_zero_gives_binary(self):
        model = small_model()
        x = (np.random.default_rng(1).uniform(size=(5, 4)) < 0.5).astype(float)
        value = model.objective(x, k=3, tau=0.0, rng=np.random.default_rng(2))
        # weights computed from exact binary latents: every zeta in {0, 1}
        g = value.graph
        zeta_nodes = [n for n in g.nodes if n.op == "constant" and n.value.shape == (15, 4)]
        assert zeta_nodes and np.isin(zeta_nodes[-1].value, (0.0, 1.0)).all()

    def test_fixed_seed_matches_scalar_oracle(self):
        """Bit-for-bit agreement with an independent scalar recomputation."""
        model = small_model(seed=4)
        x = (np.random.default_rng(5).uniform(size=(2, 4)) < 0.5).astype(float)
        tau = 1.0 / 7.0
        rng = np.random.default_rng(6)
        value = model.objective(x, k=1, tau=tau, rng=rng, training=False)

        w = model.encoders[0].params["enc0.out.w"]
        b = model.encoders[0].params["enc0.out.b"]
        rho = np.random.default_rng(6).uniform(size=(2, 1, 4)).reshape(2, 4)
        logits = x @ w + b
        zeta = relax(logits, rho, tau)
        dec_w = model.decoder.params["dec.out.w"]
        dec_b = model.decoder.params["dec.out.b"]
        pl = zeta @ dec_w + dec_b
        log_px = np.sum(x * pl - (np.maximum(pl, 0) + np.log1p(np.exp(-np.abs(pl)))), axis=1)
        log_q = log_pmf_from_logits(logits, zeta)
        neg_e = -energy(model.rbm, zeta[:, :2], zeta[:, 2:])
        expected = (log_px + neg_e - log_q).mean()
        assert value.objective == expected  # identical float path

    def test_two_hierarchies_condition_on_first(self):
        model = small_model(hierarchies=2)
        x = (np.random.default_rng(7).uniform(size=(4, 4)) < 0.5).astype(float)
        value = model.objective(x, k=2, tau=0.2, rng=np.random.default_rng(8))
        assert value.log_weights.shape == (4, 2)
        grads = value.graph.backward(value.loss_node)
        assert "enc1.out.w" in grads and grads["enc1.out.w"].shape == (6, 2)


class TestDecode:
    def test_zero_parameter_decoder_is_uniform(self):
        model = small_model(zeros=True)
        x = (np.random.default_rng(9).uniform(size=(6, 4)) < 0.3).astype(float)
        value = model.objective(x, k=1, tau=0.0, rng=np.random.default_rng(10))
        assert value.autoencoding == pytest.approx(-4 * np.log(2.0), rel=1e-12)

    def test_saturated_logits_reconstruct(self):
        model = small_model(zeros=True)
        x = np.array([[1.0, 0.0, 1.0, 0.0]])
        # force the decoder bias to strongly match x
        model.decoder.params["dec.out.b"][:] = np.where(x[0] == 1.0, 40.0, -40.0)
        value = model.objective(x, k=1, tau=0.0, rng=np.random.default_rng(11))
        assert value.autoencoding == pytest.approx(0.0, abs=1e-12)

    def test_decode_mean_half_for_zero_model(self):
        model = small_model(zeros=True)
        means = model.decode_mean(np.array([1.0, 0.0, 1.0, 1.0]))
        np.testing.assert_allclose(means, 0.5)


class TestObjective:
    def test_k1_tau0_matches_enumeration_elbo(self):
        """Against an exhaustive oracle: average the single-sample discrete

        bound over every possible latent draw, weighting by the posterior."""
        model = small_model(seed=12)
        model.rbm.a[:] = [0.2, -0.1]
        model.rbm.b[:] = [0.1, 0.3]
        model.rbm.w[:] = 0.4 * np.random.default_rng(13).standard_normal((2, 2))
        x = (np.random.default_rng(14).uniform(size=(3, 4)) < 0.5).astype(float)
        log_z = exact_log_partition(model.rbm)

        w = model.encoders[0].params["enc0.out.w"]
        b = model.encoders[0].params["enc0.out.b"]
        logits = x @ w + b
        qbar = 1.0 / (1.0 + np.exp(-logits))
        dec_w = model.decoder.params["dec.out.w"]
        dec_b = model.decoder.params["dec.out.b"]
        states = enumerate_states(4)
        elbo = np.zeros(3)
        for i in range(3):
            for z in states:
                qz = np.prod(np.where(z == 1.0, qbar[i], 1 - qbar[i]))
                pl = z @ dec_w + dec_b
                log_px = np.sum(
                    x[i] * pl - (np.maximum(pl, 0) + np.log1p(np.exp(-np.abs(pl))))
                )
                neg_e = -energy(model.rbm, z[:2], z[2:])
                elbo[i] += qz * (log_px + neg_e - np.log(qz) - log_z)
        # Monte-Carlo average of the k=1 objective over many draws
        rng = np.random.default_rng(15)
        draws = np.array(
            [
                model.objective(x, k=1, tau=0.0, rng=rng, training=False).log_weights[:, 0]
                for _ in range(3000)
            ]
        )
        mc = draws.mean(axis=0) - log_z
        se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
        assert np.all(np.abs(mc - elbo) < 3.5 * se)

    def test_more_samples_tighten_the_bound(self):
        model = small_model(seed=16)
        x = (np.random.default_rng(17).uniform(size=(4, 4)) < 0.5).astype(float)
        rng = np.random.default_rng(18)
        vals = {k: [] for k in (1, 20)}
        for _ in range(200):
            for k in vals:
                vals[k].append(model.objective(x, k=k, tau=1.0 / 7, rng=rng).objective)
        m1, m20 = np.mean(vals[1]), np.mean(vals[20])
        se = np.std(vals[1], ddof=1) / np.sqrt(200)
        assert m20 >= m1 - 2 * se

    def test_non_finite_weight_identifies_sample(self):
        model = small_model(zeros=True)
        model.decoder.params["dec.out.b"][:] = np.inf
        with pytest.raises(Exception, match="node"):
            model.objective(np.zeros((2, 4)), k=2, tau=0.0, rng=np.random.default_rng(19))


class TestDiscreteBound:
    def test_k1_is_single_sample_elbo_estimate(self):
        model = small_model(seed=20)
        x = (np.random.default_rng(21).uniform(size=(4, 4)) < 0.5).astype(float)
        log_z = exact_log_partition(model.rbm)
        b = model.discrete_bound(x, k=1, log_z=log_z, rng=np.random.default_rng(22))
        v = model.objective(x, k=1, tau=0.0, rng=np.random.default_rng(22))
        np.testing.assert_allclose(b, v.log_weights[:, 0] - log_z, rtol=1e-12)

    def test_tau_zero_consistency(self):
        """Relaxed objective at tau = 0 equals the discrete bound exactly for

        shared rng, for k in {1, 5, 20}."""
        model = small_model(seed=23)
        model.rbm.w[:] = 0.5 * np.random.default_rng(24).standard_normal((2, 2))
        x = (np.random.default_rng(25).uniform(size=(6, 4)) < 0.5).astype(float)
        log_z = exact_log_partition(model.rbm)
        for k in (1, 5, 20):
            v = model.objective(x, k=k, tau=0.0, rng=np.random.default_rng(26))
            b = model.discrete_bound(x, k=k, log_z=log_z, rng=np.random.default_rng(26))
            assert abs((v.objective - log_z) - b.mean()) < 1e-10

    def test_chunk_merge_replays_exactly(self):
        """Chunked evaluation must equal a manual logsumexp merge of the

        same chunk draws (shared rng stream)."""
        model = small_model(seed=27)
        x = (np.random.default_rng(28).uniform(size=(3, 4)) < 0.5).astype(float)
        log_z = exact_log_partition(model.rbm)
        k, chunk = 100, 30
        chunked = model.discrete_bound(
            x, k=k, log_z=log_z, rng=np.random.default_rng(30), chunk_size=chunk
        )
        rng = np.random.default_rng(30)
        acc = np.full(3, -np.inf)
        for kc in (30, 30, 30, 10):
            w = model.objective(x, kc, 0.0, rng, training=False).log_weights
            m = w.max(axis=1)
            acc = np.logaddexp(acc, m + np.log(np.exp(w - m[:, None]).sum(axis=1)))
        np.testing.assert_array_equal(chunked, acc - np.log(k) - log_z)

    def test_large_k_recovers_exact_marginal(self):
        """k = 1e5 bound lands within 0.05 nat of the enumerated marginal."""
        model = small_model(seed=31)
        model.rbm.a[:] = [0.3, -0.2]
        model.rbm.w[:] = 0.6 * np.random.default_rng(32).standard_normal((2, 2))
        x = (np.random.default_rng(33).uniform(size=(2, 4)) < 0.5).astype(float)
        log_z = exact_log_partition(model.rbm)
        dec_w = model.decoder.params["dec.out.w"]
        dec_b = model.decoder.params["dec.out.b"]
        states = enumerate_states(4)
        exact = np.zeros(2)
        for i in range(2):
            total = -np.inf
            for z in states:
                pl = z @ dec_w + dec_b
                log_px = np.sum(
                    x[i] * pl - (np.maximum(pl, 0) + np.log1p(np.exp(-np.abs(pl))))
                )
                total = np.logaddexp(total, -energy(model.rbm, z[:2], z[2:]) + log_px)
            exact[i] = total - log_z
        bound = model.discrete_bound(
            x, k=100_000, log_z=log_z, rng=np.random.default_rng(34), chunk_size=5000
        )
        assert np.all(np.abs(bound - exact) < 0.05)

    def test_bound_nondecreasing_in_k(self):
        model = small_model(seed=35)
        x = (np.random.default_rng(36).uniform(size=(2, 4)) < 0.5).astype(float)
        log_z = exact_log_partition(model.rbm)
        rng = np.random.default_rng(37)
        means = {}
        ses = {}
        for k in (1, 10, 100):
            reps = np.array(
                [model.discrete_bound(x, k, log_z, rng).mean() for _ in range(500)]
            )
            means[k] = reps.mean()
            ses[k] = reps.std(ddof=1) / np.sqrt(len(reps))
        assert means[10] >= means[1] - 2 * (ses[1] + ses[10])
        assert means[100] >= means[10] - 2 * (ses[10] + ses[100])
