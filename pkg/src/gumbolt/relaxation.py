"""Binary relaxation of latent units and the proxy log-probabilities.

A Bernoulli unit with logit l is reparameterized through uniform noise rho
as H(l + logit(rho)); replacing the step with a tempered sigmoid gives the
differentiable surrogate zeta used during training.  The proxy log-prior
evaluates the (negated) energy of a relaxed configuration against the
*discrete* normalizer, which lower-bounds the relaxed density.
"""

import numpy as np

from gumbolt.autodiff import sigmoid, softplus
from gumbolt.rbm import energy

# Keeps logit(rho) finite; also the floor used when clamping mean inputs.
NOISE_EPS = 1e-7


def noise_logit(rho):
    """logit of uniform noise, clamped away from {0, 1}."""
    rho = np.clip(np.asarray(rho, dtype=np.float64), NOISE_EPS, 1.0 - NOISE_EPS)
    return np.log(rho) - np.log1p(-rho)


def relax(l, rho, tau):
    """Tempered-sigmoid relaxation sigma((l + logit(rho)) / tau).

    Monotone in both arguments and differentiable in ``l``; approaches
    ``discretize`` as tau -> 0.
    """
    if tau <= 0:
        raise ValueError("tau must be positive; use discretize for the tau=0 limit")
    return sigmoid((np.asarray(l, dtype=np.float64) + noise_logit(rho)) / tau)


def discretize(l, rho):
    """Exact binary reparameterization H(l + logit(rho)), with H(0) = 1."""
    pre = np.asarray(l, dtype=np.float64) + noise_logit(rho)
    return (pre >= 0.0).astype(np.float64)


def log_pmf_proxy(zeta, qbar):
    """Bernoulli log-pmf evaluated at possibly-fractional unit values.

    Sums ``zeta log qbar + (1 - zeta) log(1 - qbar)`` over the last axis;
    exact at binary zeta.  ``qbar`` is clamped away from {0, 1}.
    """
    zeta = np.asarray(zeta, dtype=np.float64)
    qbar = np.clip(np.asarray(qbar, dtype=np.float64), NOISE_EPS, 1.0 - NOISE_EPS)
    return np.sum(zeta * np.log(qbar) + (1.0 - zeta) * np.log1p(-qbar), axis=-1)


def log_pmf_from_logits(l, zeta):
    """Same quantity as ``log_pmf_proxy`` with qbar = sigma(l), via the

    overflow-free identity zeta*l - softplus(l), summed over the last axis."""
    l = np.asarray(l, dtype=np.float64)
    return np.sum(np.asarray(zeta, dtype=np.float64) * l - softplus(l), axis=-1)


def proxy_log_prior(rbm, zeta1, zeta2, log_z):
    """-E(zeta1, zeta2) - log_z: relaxed energy against the discrete normalizer.

    Equals the exact prior log-pmf at binary inputs; on the interior of the
    cube it lower-bounds the normalized relaxed log-density.
    """
    return -energy(rbm, zeta1, zeta2) - log_z


# -- graph-building counterparts (differentiable paths) ----------------------


def relax_tensor(g, logits, rho, tau):
    """Graph version of ``relax``: differentiable in ``logits``."""
    if tau <= 0:
        raise ValueError("tau must be positive; use discretize for the tau=0 limit")
    noise = g.constant(noise_logit(rho))
    return g.sigmoid(g.scale(g.add(logits, noise), 1.0 / tau))


def log_pmf_tensor(g, logits, zeta):
    """Graph version of ``log_pmf_from_logits``; returns a (rows, 1) tensor."""
    terms = g.sub(g.mul(zeta, logits), g.softplus(logits))
    return g.sum(terms, axis=1, keepdims=True)
