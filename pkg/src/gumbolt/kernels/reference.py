"""Pure-numpy implementations of the hot sampling loops.

The compiled backend in ``_gibbs.pyx`` mirrors these functions exactly: same
signatures, same in-place semantics, and the same consumption order of the
pre-drawn uniform arrays, so a caller that supplies identical noise gets the
same chain trajectories from either backend (up to last-ulp differences in
the transcendental functions).
"""

import numpy as np


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def gibbs_sweeps(a, b, w, z1, z2, u1, u2):
    """Run ``S`` block-Gibbs sweeps on a batch of chains, in place.

    z1: (C, n1) uint8, z2: (C, n2) uint8.  Per sweep s the z2 layer is
    resampled from sigma(b + z1 W^T) using u2[s] (shape (C, n2)), then z1
    from sigma(a + z2 W) using u1[s] (shape (C, n1)).
    """
    n_sweeps = u1.shape[0]
    for s in range(n_sweeps):
        p2 = _sigmoid(z1.astype(np.float64) @ w.T + b)
        z2[...] = u2[s] < p2
        p1 = _sigmoid(z2.astype(np.float64) @ w + a)
        z1[...] = u1[s] < p1


def _ladder_energies(a, b, w, z1, z2):
    """Energies of every chain at every rung: (B, C) for states (B, C, n)."""
    z1f = z1.astype(np.float64)
    z2f = z2.astype(np.float64)
    return -(z1f @ a + z2f @ b + np.einsum("bcj,ji,bci->bc", z2f, w, z1f))


def tempered_sweeps(
    a,
    b,
    w,
    betas,
    z1,
    z2,
    u1,
    u2,
    u_swap,
    parity0,
    energy_out,
    attempted,
    accepted,
):
    """Advance a ladder of tempered chains, in place.

    States z1 (B, C, n1) / z2 (B, C, n2) hold C chains at each of B inverse
    temperatures.  Per sweep: block-Gibbs update at every rung (conditional
    logits scaled by beta, consuming u2[s] then u1[s]), one energy evaluation
    per chain, then replica-exchange proposals on adjacent rung pairs of
    parity (parity0 + s) % 2 accepted when u_swap[s, i, c] <
    exp((beta_i - beta_j)(E_i - E_j)).  Post-exchange energies are written to
    energy_out[s] when given; attempted/accepted swap counts accumulate per
    pair.  Pass u_swap=None to disable exchange.
    """
    n_sweeps = u1.shape[0]
    n_betas = betas.shape[0]
    scale = betas[:, None, None]
    for s in range(n_sweeps):
        p2 = _sigmoid((z1.astype(np.float64) @ w.T + b) * scale)
        z2[...] = u2[s] < p2
        p1 = _sigmoid((z2.astype(np.float64) @ w + a) * scale)
        z1[...] = u1[s] < p1
        energies = _ladder_energies(a, b, w, z1, z2)
        if u_swap is not None:
            for i in range((parity0 + s) % 2, n_betas - 1, 2):
                delta = (betas[i] - betas[i + 1]) * (energies[i] - energies[i + 1])
                with np.errstate(over="ignore"):
                    swap = u_swap[s, i] < np.exp(delta)
                attempted[i] += swap.size
                accepted[i] += int(np.count_nonzero(swap))
                if np.any(swap):
                    lo1, hi1 = z1[i, swap].copy(), z1[i + 1, swap].copy()
                    z1[i, swap], z1[i + 1, swap] = hi1, lo1
                    lo2, hi2 = z2[i, swap].copy(), z2[i + 1, swap].copy()
                    z2[i, swap], z2[i + 1, swap] = hi2, lo2
                    e_lo = energies[i, swap].copy()
                    energies[i, swap] = energies[i + 1, swap]
                    energies[i + 1, swap] = e_lo
        if energy_out is not None:
            energy_out[s] = energies
