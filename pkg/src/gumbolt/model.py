"""Encoder/decoder networks and the training and evaluation objectives.

The generative side is an RBM prior over binary latents plus a feed-forward
Bernoulli decoder; the approximating posterior has one or two stochastic
hierarchies of relaxed binary units.  ``GumboltVae.objective`` builds the
k-sample relaxed training bound on a fresh graph; ``discrete_bound`` is the
tau = 0 importance-weighted evaluation bound and reuses the same construction
so that, for identical rng, the two agree exactly at tau = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gumbolt.autodiff import BatchNormState, Graph
from gumbolt.rbm import Rbm
from gumbolt.relaxation import discretize, log_pmf_tensor, relax_tensor

# Latent sizes per stochastic hierarchy when not overridden: one-symbol
# structures use a 100x100 prior, two-symbol structures 200x200.
DEFAULT_LATENT = {1: 100, 2: 200}


@dataclass(frozen=True)
class StructureSpec:
    """Posterior/network layout parsed from a structure string.

    Each symbol is one stochastic hierarchy: "-" gives that hierarchy a
    linear logit head, "~" one hidden tanh layer.  The prior couples layers
    of n1 and n2 units; with a single hierarchy the posterior is factorial
    over all n1 + n2 units, with two the second hierarchy conditions on
    (x, zeta1).
    """

    symbols: tuple
    n1: int
    n2: int
    hidden_width: int = 200

    @property
    def hierarchies(self):
        return len(self.symbols)

    @classmethod
    def parse(cls, text, n1=None, n2=None, hidden_width=200):
        cleaned = text.replace("−", "-").replace(" ", "")
        symbols = tuple(cleaned)
        if not symbols or any(s not in "-~" for s in symbols) or len(symbols) > 2:
            raise ValueError(f"unrecognized structure {text!r}")
        default = DEFAULT_LATENT[len(symbols)]
        return cls(symbols, n1 or default, n2 or default, hidden_width)

    def canonical(self):
        return " ".join(self.symbols)


class Network:
    """Affine(+ batch-norm) + tanh blocks ending in a linear logit head.

    Owns its parameter arrays (registered into a Graph by name on every
    forward) and the running batch-norm statistics.
    """

    def __init__(self, name, in_dim, out_dim, n_hidden, width=200,
                 batch_norm=False, rng=None, init="glorot"):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.batch_norm = batch_norm
        self.params = {}
        self.bn_states = {}
        self._hidden = []
        prev = in_dim
        for idx in range(n_hidden):
            w = self._init_weight(prev, width, rng, init)
            self.params[f"{name}.h{idx}.w"] = w
            self.params[f"{name}.h{idx}.b"] = np.zeros(width)
            if batch_norm:
                self.params[f"{name}.h{idx}.bn_gamma"] = np.ones(width)
                self.params[f"{name}.h{idx}.bn_beta"] = np.zeros(width)
                self.bn_states[f"{name}.h{idx}"] = BatchNormState.create(width)
            self._hidden.append(idx)
            prev = width
        self.params[f"{name}.out.w"] = self._init_weight(prev, out_dim, rng, init)
        self.params[f"{name}.out.b"] = np.zeros(out_dim)

    @staticmethod
    def _init_weight(fan_in, fan_out, rng, init):
        if init == "zeros" or rng is None:
            return np.zeros((fan_in, fan_out))
        std = np.sqrt(2.0 / (fan_in + fan_out))
        return std * rng.standard_normal((fan_in, fan_out))

    def forward(self, g, x, training=False):
        h = x
        for idx in self._hidden:
            w = g.parameter(f"{self.name}.h{idx}.w", self.params[f"{self.name}.h{idx}.w"])
            b = g.parameter(f"{self.name}.h{idx}.b", self.params[f"{self.name}.h{idx}.b"])
            h = g.affine(h, w, b)
            if self.batch_norm:
                gamma = g.parameter(
                    f"{self.name}.h{idx}.bn_gamma", self.params[f"{self.name}.h{idx}.bn_gamma"]
                )
                beta = g.parameter(
                    f"{self.name}.h{idx}.bn_beta", self.params[f"{self.name}.h{idx}.bn_beta"]
                )
                h = g.batch_norm(h, gamma, beta, self.bn_states[f"{self.name}.h{idx}"], training)
            h = g.tanh(h)
        w = g.parameter(f"{self.name}.out.w", self.params[f"{self.name}.out.w"])
        b = g.parameter(f"{self.name}.out.b", self.params[f"{self.name}.out.b"])
        return g.affine(h, w, b)


@dataclass
class ObjectiveValue:
    """One evaluation of the k-sample bound (log Z excluded from the value).

    ``objective`` is the batch-mean importance-weighted term; ``loss`` is its
    negation plus nothing else — the log-partition enters training through
    the sampled surrogate gradient, and enters reported bounds only at
    evaluation time.  Diagnostics are batch means of the weight components.
    """

    loss: float
    objective: float
    log_weights: np.ndarray
    autoencoding: float
    prior: float
    entropy: float
    graph: Graph
    loss_node: object


class GumboltVae:
    """RBM-prior VAE with relaxed binary latents."""

    def __init__(self, structure, n_pixels, init_rng=None, init="glorot",
                 encoder_batch_norm=True, decoder_batch_norm=True, rbm=None):
        if isinstance(structure, str):
            structure = StructureSpec.parse(structure)
        self.structure = structure
        self.n_pixels = n_pixels
        n1, n2 = structure.n1, structure.n2
        self.rbm = rbm if rbm is not None else Rbm.zeros(n1, n2)
        depth = {"-": 0, "~": 1}
        width = structure.hidden_width
        self.encoders = []
        if structure.hierarchies == 1:
            self.encoders.append(
                Network("enc0", n_pixels, n1 + n2, depth[structure.symbols[0]], width,
                        encoder_batch_norm, init_rng, init)
            )
        else:
            self.encoders.append(
                Network("enc0", n_pixels, n1, depth[structure.symbols[0]], width,
                        encoder_batch_norm, init_rng, init)
            )
            self.encoders.append(
                Network("enc1", n_pixels + n1, n2, depth[structure.symbols[1]], width,
                        encoder_batch_norm, init_rng, init)
            )
        dec_hidden = sum(1 for s in structure.symbols if s == "~")
        self.decoder = Network("dec", n1 + n2, n_pixels, dec_hidden, width,
                               decoder_batch_norm, init_rng, init)

    # -- parameter plumbing ------------------------------------------------

    def parameters(self):
        """All trainable arrays by name (shared references, not copies)."""
        out = {"rbm.a": self.rbm.a, "rbm.b": self.rbm.b, "rbm.w": self.rbm.w}
        for net in self.encoders + [self.decoder]:
            out.update(net.params)
        return out

    def bn_states(self):
        out = {}
        for net in self.encoders + [self.decoder]:
            out.update(net.bn_states)
        return out

    # -- graph pieces --------------------------------------------------------

    def _sample_layer(self, g, logits, rho, tau):
        """Relaxed (tau > 0) or exact binary (tau = 0) sample of one layer."""
        if tau > 0:
            return relax_tensor(g, logits, rho, tau)
        return g.constant(discretize(logits.value, rho))

    def encode(self, g, x, tau, rng, k=1, training=False):
        """Posterior samples and their proxy log-pmf.

        Logits are computed once per datapoint and every row is repeated for
        the k samples (row r = datapoint r // k, sample r % k).  Noise draw
        order: one uniform block per hierarchy, shape (batch, k, units).
        Returns (zeta1, zeta2, log_q) tensors with R = batch * k rows.
        """
        batch = x.value.shape[0]
        n1, n2 = self.structure.n1, self.structure.n2
        if self.structure.hierarchies == 1:
            logits = g.repeat_rows(self.encoders[0].forward(g, x, training), k)
            rho = rng.uniform(size=(batch, k, n1 + n2)).reshape(batch * k, n1 + n2)
            zeta = self._sample_layer(g, logits, rho, tau)
            log_q = log_pmf_tensor(g, logits, zeta)
            return g.slice_cols(zeta, 0, n1), g.slice_cols(zeta, n1, n1 + n2), log_q
        logits1 = g.repeat_rows(self.encoders[0].forward(g, x, training), k)
        rho1 = rng.uniform(size=(batch, k, n1)).reshape(batch * k, n1)
        zeta1 = self._sample_layer(g, logits1, rho1, tau)
        x_rep = g.constant(np.repeat(x.value, k, axis=0))
        logits2 = self.encoders[1].forward(g, g.concat([x_rep, zeta1]), training)
        rho2 = rng.uniform(size=(batch, k, n2)).reshape(batch * k, n2)
        zeta2 = self._sample_layer(g, logits2, rho2, tau)
        log_q = g.add(log_pmf_tensor(g, logits1, zeta1), log_pmf_tensor(g, logits2, zeta2))
        return zeta1, zeta2, log_q

    def decode(self, g, zeta, training=False):
        """Pixel logits given a concatenated latent configuration."""
        return self.decoder.forward(g, zeta, training)

    def _neg_energy_node(self, g, zeta1, zeta2):
        a = g.parameter("rbm.a", self.rbm.a)
        b = g.parameter("rbm.b", self.rbm.b)
        w = g.parameter("rbm.w", self.rbm.w)
        n1, n2 = self.rbm.n1, self.rbm.n2
        term1 = g.matmul(zeta1, g.reshape(a, (n1, 1)))
        term2 = g.matmul(zeta2, g.reshape(b, (n2, 1)))
        quad = g.sum(g.mul(g.matmul(zeta2, w), zeta1), axis=1, keepdims=True)
        return g.add(g.add(term1, term2), quad)

    @staticmethod
    def _bernoulli_loglik(g, x_rep, logits):
        """Row sums of x * log sigma(l) + (1 - x) * log sigma(-l)."""
        terms = g.sub(g.mul(x_rep, logits), g.softplus(logits))
        return g.sum(terms, axis=1, keepdims=True)

    def objective(self, x, k, tau, rng, kl_beta=1.0, training=True, dtype=np.float64):
        """k-sample relaxed bound on a batch (log-partition value excluded).

        Per datapoint, k latent samples share the encoder pass; each log
        weight is log p(x|z) + kl_beta * (-E(z) - log q(z|x)) and the bound
        is mean(logsumexp_k - log k).  At tau = 0 the samples are exact
        binary and the value equals the discrete evaluation bound for the
        same rng.  Raises on non-finite weights, naming the datapoint.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if tau < 0:
            raise ValueError("tau must be >= 0")
        x = np.asarray(x, dtype=dtype)
        batch = x.shape[0]
        g = Graph(dtype=dtype)
        x_t = g.constant(x)
        zeta1, zeta2, log_q = self.encode(g, x_t, tau, rng, k, training)
        x_rep = g.constant(np.repeat(x, k, axis=0))
        pixel_logits = self.decode(g, g.concat([zeta1, zeta2]), training)
        log_px = self._bernoulli_loglik(g, x_rep, pixel_logits)
        neg_energy = self._neg_energy_node(g, zeta1, zeta2)
        log_w = g.add(log_px, g.scale(g.sub(neg_energy, log_q), kl_beta))
        bad = np.flatnonzero(~np.isfinite(log_w.value))
        if bad.size:
            raise FloatingPointError(
                f"non-finite log-weight for datapoint {bad[0] // k}, sample {bad[0] % k}"
            )
        weights = g.reshape(log_w, (batch, k))
        obj = g.add_scalar(g.mean(g.logsumexp(weights, axis=1)), -np.log(k))
        loss = g.neg(obj)
        return ObjectiveValue(
            loss=float(loss.value),
            objective=float(obj.value),
            log_weights=log_w.value.reshape(batch, k).copy(),
            autoencoding=float(log_px.value.mean()),
            prior=float(neg_energy.value.mean()),
            entropy=float(-log_q.value.mean()),
            graph=g,
            loss_node=loss,
        )

    def discrete_bound(self, x, k, log_z, rng, chunk_size=None):
        """Per-datapoint k-sample evaluation bound at tau = 0.

        Draws are exact binary posterior samples; chunks of at most
        ``chunk_size`` samples are combined by a running logsumexp so large k
        stays memory-bounded.  Returns log-likelihood bounds (shape (batch,)),
        already including -log_z.
        """
        x = np.asarray(x, dtype=np.float64)
        if chunk_size is None or chunk_size >= k:
            chunks = [k]
        else:
            chunks = [chunk_size] * (k // chunk_size)
            if k % chunk_size:
                chunks.append(k % chunk_size)
        acc = np.full(x.shape[0], -np.inf)
        for kc in chunks:
            value = self.objective(x, kc, 0.0, rng, kl_beta=1.0, training=False)
            chunk_lse = np.max(value.log_weights, axis=1)
            chunk_lse += np.log(
                np.sum(np.exp(value.log_weights - chunk_lse[:, None]), axis=1)
            )
            acc = np.logaddexp(acc, chunk_lse)
        return acc - np.log(k) - log_z

    def decode_mean(self, z):
        """Pixel Bernoulli means for binary latent rows (evaluation mode)."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        g = Graph()
        logits = self.decode(g, g.constant(z), training=False)
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-logits.value))
