"""Bipartite Boltzmann energy model.

Energy evaluation on binary or relaxed unit values, exact log-partition for
small instances, block Gibbs sampling, and the persistent-chain Monte-Carlo
estimate of the log-partition gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gumbolt import kernels
from gumbolt.autodiff import logsumexp, softplus

# Sweeps per pre-drawn noise block; frozen so that chain trajectories are a
# pure function of the rng state.
NOISE_BLOCK = 64

# Enumeration guard for the exact partition function (per layer; the smaller
# layer is enumerated, the other summed analytically).
MAX_EXACT_UNITS = 24


@dataclass
class Rbm:
    """Biases and couplings of a two-layer Boltzmann machine.

    ``a`` biases the n1 units of layer 1, ``b`` the n2 units of layer 2, and
    ``w`` (shape n2 x n1) couples the layers.  The energy of a configuration
    is ``E(v1, v2) = -(a.v1 + b.v2 + v2.W.v1)``.
    """

    a: np.ndarray
    b: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.a = np.ascontiguousarray(self.a, dtype=np.float64)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64)
        self.w = np.ascontiguousarray(self.w, dtype=np.float64)
        if self.a.ndim != 1 or self.b.ndim != 1:
            raise ValueError("bias vectors must be 1-D")
        if self.w.shape != (self.b.size, self.a.size):
            raise ValueError(
                f"coupling matrix shape {self.w.shape} does not match "
                f"({self.b.size}, {self.a.size})"
            )
        if not (
            np.all(np.isfinite(self.a))
            and np.all(np.isfinite(self.b))
            and np.all(np.isfinite(self.w))
        ):
            raise ValueError("all parameters must be finite")

    @property
    def n1(self):
        return self.a.size

    @property
    def n2(self):
        return self.b.size

    @classmethod
    def zeros(cls, n1, n2):
        return cls(np.zeros(n1), np.zeros(n2), np.zeros((n2, n1)))

    @classmethod
    def random(cls, n1, n2, rng, weight_scale=0.5, bias_scale=0.0):
        """Gaussian parameters, mainly for tests and verification suites."""
        a = bias_scale * rng.standard_normal(n1)
        b = bias_scale * rng.standard_normal(n2)
        w = weight_scale * rng.standard_normal((n2, n1))
        return cls(a, b, w)


@dataclass
class PcdChains:
    """Persistent binary sampling chains with their own rng."""

    z1: np.ndarray
    z2: np.ndarray
    rng: np.random.Generator

    @classmethod
    def initialize(cls, rbm, n_chains, rng):
        """Fresh chains from independent fair coin flips."""
        z1 = rng.integers(0, 2, size=(n_chains, rbm.n1), dtype=np.uint8)
        z2 = rng.integers(0, 2, size=(n_chains, rbm.n2), dtype=np.uint8)
        return cls(z1, z2, rng)

    @property
    def n_chains(self):
        return self.z1.shape[0]


def _check_pair(rbm, v1, v2):
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape[-1] != rbm.n1 or v2.shape[-1] != rbm.n2:
        raise ValueError(
            f"state dimensions ({v1.shape[-1]}, {v2.shape[-1]}) do not match "
            f"model ({rbm.n1}, {rbm.n2})"
        )
    if v1.ndim != v2.ndim or v1.ndim > 2 or (v1.ndim == 2 and len(v1) != len(v2)):
        raise ValueError("v1 and v2 must be a single pair or equal-length batches")
    return v1, v2


def energy(rbm, v1, v2):
    """E(v1, v2) = -(a.v1 + b.v2 + v2.W.v1).

    Accepts a single configuration pair or a batch (rows paired); unit values
    may be binary or anywhere in [0, 1] (relaxed).
    """
    v1, v2 = _check_pair(rbm, v1, v2)
    interaction = np.sum((v2 @ rbm.w) * v1, axis=-1)
    return -(v1 @ rbm.a + v2 @ rbm.b + interaction)


def enumerate_states(n):
    """All 2^n binary vectors of length n as a (2^n, n) float array."""
    if n == 0:
        return np.zeros((1, 0))
    grid = np.indices((2,) * n).reshape(n, -1).T
    return grid.astype(np.float64)


def exact_log_partition(rbm):
    """log sum_z exp(-E(z)) by enumerating the smaller layer.

    The other layer is summed analytically (its units decouple given the
    enumerated one), so the cost is 2^min(n1, n2).  Raises when both layers
    exceed the enumeration guard.
    """
    if min(rbm.n1, rbm.n2) > MAX_EXACT_UNITS:
        raise ValueError(
            f"model too large for exact enumeration (min layer > {MAX_EXACT_UNITS} "
            "units); use the tempered-ladder estimator in gumbolt.partition"
        )
    if rbm.n1 <= rbm.n2:
        bias, other_bias, w = rbm.a, rbm.b, rbm.w  # w maps z1 -> layer-2 logits
    else:
        bias, other_bias, w = rbm.b, rbm.a, rbm.w.T
    n = bias.size
    chunk = 16
    best = -np.inf
    total = 0.0
    # streaming logsumexp over 2^n states in chunks of 2^chunk
    for start in range(0, 2 ** n, 2 ** min(chunk, n)):
        stop = min(start + 2 ** min(chunk, n), 2 ** n)
        idx = np.arange(start, stop, dtype=np.uint64)
        states = ((idx[:, None] >> np.arange(n, dtype=np.uint64)) & 1).astype(np.float64)
        logits = states @ w.T + other_bias
        terms = states @ bias + softplus(logits).sum(axis=1)
        m = terms.max()
        if m > best:
            total *= np.exp(best - m)
            best = m
        total += np.exp(terms - best).sum()
    return float(best + np.log(total))


def exact_probabilities(rbm):
    """Joint Boltzmann probabilities for every (z1, z2) state of a tiny model.

    Returns (states1, states2, p) where p[i, j] is the probability of
    (states1[i], states2[j]).  Intended for verification oracles.
    """
    if rbm.n1 + rbm.n2 > 2 * MAX_EXACT_UNITS or 2 ** (rbm.n1 + rbm.n2) > 2 ** 22:
        raise ValueError("model too large for joint enumeration")
    s1 = enumerate_states(rbm.n1)
    s2 = enumerate_states(rbm.n2)
    neg_e = s1 @ rbm.a + (s2 @ rbm.b)[:, None] + s2 @ rbm.w @ s1.T  # (2^n2, 2^n1)
    neg_e = neg_e.T
    log_z = logsumexp(neg_e.reshape(-1))
    return s1, s2, np.exp(neg_e - log_z)


def advance_chains(rbm, chains, n_sweeps):
    """Run block sweeps on persistent chains, drawing noise per block."""
    done = 0
    while done < n_sweeps:
        block = min(NOISE_BLOCK, n_sweeps - done)
        u2 = chains.rng.uniform(size=(block, chains.n_chains, rbm.n2))
        u1 = chains.rng.uniform(size=(block, chains.n_chains, rbm.n1))
        kernels.gibbs_sweeps(rbm.a, rbm.b, rbm.w, chains.z1, chains.z2, u1, u2)
        done += block


def gibbs_sweep(rbm, chains):
    """One block update: z2 ~ Bern(sigma(b + W z1)), then z1 ~ Bern(sigma(a + W'z2))."""
    if chains.z1.shape[1] != rbm.n1 or chains.z2.shape[1] != rbm.n2:
        raise ValueError("chains are dimensioned for a different model")
    advance_chains(rbm, chains, 1)
    return chains


def pcd_negative_phase(rbm, chains, n_sweeps):
    """Sampled gradient of log Z after advancing persistent chains.

    Runs ``n_sweeps`` block sweeps and returns the Monte-Carlo moments
    (mean z1, mean z2, mean z2 z1') of the final states, which estimate
    (d/da, d/db, d/dW) log Z.  Chains persist across calls.
    """
    if n_sweeps < 1:
        raise ValueError("n_sweeps must be >= 1")
    if chains.z1.shape[1] != rbm.n1 or chains.z2.shape[1] != rbm.n2:
        raise ValueError("chains are dimensioned for a different model")
    advance_chains(rbm, chains, n_sweeps)
    z1 = chains.z1.astype(np.float64)
    z2 = chains.z2.astype(np.float64)
    return {
        "grad_a": z1.mean(axis=0),
        "grad_b": z2.mean(axis=0),
        "grad_w": z2.T @ z1 / chains.n_chains,
    }
