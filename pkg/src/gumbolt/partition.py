"""Log-partition estimation for models too large to enumerate.

A ladder of tempered chains (inverse temperatures 0 = uniform base up to 1 =
target) is advanced by block Gibbs with replica-exchange moves; the log-ratio
of normalizers between adjacent rungs is estimated by bridge sampling
(acceptance-ratio estimator iterated to its fixed point) and summed along
the ladder on top of the analytic base value (n1 + n2) log 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gumbolt import kernels
from gumbolt.autodiff import logsumexp
from gumbolt.rbm import NOISE_BLOCK

# Fixed-point control for the bridge estimator.
BRIDGE_MAX_ITER = 1000
BRIDGE_TOL = 1e-11


class LadderError(RuntimeError):
    """Pilot tuning or bridge estimation failed; message carries diagnostics."""


@dataclass
class TemperingLadder:
    """Chains at a fixed grid of inverse temperatures, plus exchange stats."""

    betas: np.ndarray
    z1: np.ndarray  # (n_betas, n_chains, n1) uint8
    z2: np.ndarray  # (n_betas, n_chains, n2) uint8
    rng: np.random.Generator
    attempted: np.ndarray = field(default=None)
    accepted: np.ndarray = field(default=None)
    sweeps_done: int = 0
    pilot_rates: np.ndarray = field(default=None)

    def __post_init__(self):
        self.betas = np.ascontiguousarray(self.betas, dtype=np.float64)
        if self.betas.ndim != 1 or self.betas.size < 2:
            raise ValueError("need at least two inverse temperatures")
        if not (self.betas[0] == 0.0 and self.betas[-1] == 1.0):
            raise ValueError("ladder must span beta = 0 to beta = 1")
        if np.any(np.diff(self.betas) <= 0):
            raise ValueError("inverse temperatures must be strictly increasing")
        n_pairs = self.betas.size - 1
        if self.attempted is None:
            self.attempted = np.zeros(n_pairs, dtype=np.int64)
        if self.accepted is None:
            self.accepted = np.zeros(n_pairs, dtype=np.int64)

    @classmethod
    def initialize(cls, rbm, betas, n_chains, rng):
        """Fair-coin start at every rung (exact for the beta = 0 rung)."""
        betas = np.asarray(betas, dtype=np.float64)
        shape1 = (betas.size, n_chains, rbm.n1)
        shape2 = (betas.size, n_chains, rbm.n2)
        z1 = rng.integers(0, 2, size=shape1, dtype=np.uint8)
        z2 = rng.integers(0, 2, size=shape2, dtype=np.uint8)
        return cls(betas, z1, z2, rng)

    @property
    def n_chains(self):
        return self.z1.shape[1]

    def exchange_rates(self):
        with np.errstate(invalid="ignore"):
            return self.accepted / np.maximum(self.attempted, 1)

    def reset_stats(self):
        self.attempted[:] = 0
        self.accepted[:] = 0


@dataclass
class LogZEstimate:
    mean: float
    std: float
    runs: np.ndarray


def _sweep(rbm, ladder, n_sweeps, exchange=True, energy_out=None):
    """Advance every rung ``n_sweeps`` sweeps, drawing noise per block."""
    done = 0
    n_betas = ladder.betas.size
    c = ladder.n_chains
    while done < n_sweeps:
        block = min(NOISE_BLOCK, n_sweeps - done)
        u2 = ladder.rng.uniform(size=(block, n_betas, c, rbm.n2))
        u1 = ladder.rng.uniform(size=(block, n_betas, c, rbm.n1))
        u_swap = ladder.rng.uniform(size=(block, n_betas - 1, c)) if exchange else None
        out = None
        if energy_out is not None:
            out = energy_out[done : done + block]
        kernels.tempered_sweeps(
            rbm.a,
            rbm.b,
            rbm.w,
            ladder.betas,
            ladder.z1,
            ladder.z2,
            u1,
            u2,
            u_swap,
            ladder.sweeps_done % 2,
            out,
            ladder.attempted,
            ladder.accepted,
        )
        ladder.sweeps_done += block
        done += block


def pilot_tune_ladder(
    rbm,
    target_rate=0.5,
    max_betas=40,
    n_chains=16,
    pilot_burn=200,
    pilot_sweeps=400,
    seed=0,
    max_rounds=40,
):
    """Grow a beta grid until adjacent exchange rates sit near ``target_rate``.

    Starts from {0, 1}; every round runs a short pilot, bisects pairs whose
    measured rate falls below the +-0.15 band, and drops interior rungs whose
    two flanking pairs both exceed it.  A pair with no interior rung left is
    accepted even above the band (exchange there is only cheaper than
    necessary).  Raises ``LadderError`` with the achieved rates when the grid
    would exceed ``max_betas`` or the rounds budget runs out.
    """
    if not 0.0 < target_rate < 1.0:
        raise ValueError("target_rate must be in (0, 1)")
    lo, hi = target_rate - 0.15, target_rate + 0.15
    betas = np.array([0.0, 1.0])
    rates = None
    for round_idx in range(max_rounds):
        ladder = TemperingLadder.initialize(
            rbm, betas, n_chains, np.random.default_rng([seed, round_idx])
        )
        _sweep(rbm, ladder, pilot_burn)
        ladder.reset_stats()
        _sweep(rbm, ladder, pilot_sweeps)
        rates = ladder.exchange_rates()
        too_low = [i for i in range(rates.size) if rates[i] < lo]
        # interior rung j is droppable when both flanking pairs run hot
        droppable = [
            j for j in range(1, betas.size - 1) if rates[j - 1] > hi and rates[j] > hi
        ]
        if not too_low and not droppable:
            ladder.pilot_rates = rates
            return ladder
        if too_low:
            mids = [0.5 * (betas[i] + betas[i + 1]) for i in too_low]
            betas = np.unique(np.concatenate([betas, mids]))
        else:
            keep = np.ones(betas.size, dtype=bool)
            last_dropped = -2
            for j in droppable:  # never drop adjacent rungs in one round
                if j - 1 > last_dropped:
                    keep[j] = False
                    last_dropped = j
            betas = betas[keep]
        if betas.size > max_betas:
            raise LadderError(
                f"needed more than {max_betas} rungs; last measured rates "
                f"{np.array2string(rates, precision=3)}"
            )
    raise LadderError(
        f"pilot did not settle within {max_rounds} rounds; last rates "
        f"{np.array2string(rates, precision=3)}"
    )


def bridge_log_ratio(u_a, u_b_at_a, u_b, u_a_at_b, pair_index=0):
    """log(Z_B / Z_A) from samples of two overlapping distributions.

    ``u_a``: reduced potentials of A-samples at A; ``u_b_at_a``: the same
    samples evaluated at B; likewise for the B-samples.  Solves the
    acceptance-ratio fixed point (optimal-constant iteration) starting from
    the one-sided importance-sampling estimate.
    """
    n_a, n_b = u_a.size, u_b.size
    # pooled potentials of every sample under both distributions
    ua = np.concatenate([u_a, u_a_at_b])
    ub = np.concatenate([u_b_at_a, u_b])
    log_na, log_nb = np.log(n_a), np.log(n_b)
    # importance-sampling initial guess: log mean_A exp(-(u_B - u_A))
    delta = logsumexp(-(u_b_at_a - u_a)) - log_na
    for _ in range(BRIDGE_MAX_ITER):
        log_denom = np.logaddexp(log_na - ua, log_nb + (-delta) - ub)
        new = logsumexp(-ub - log_denom)
        if abs(new - delta) < BRIDGE_TOL:
            return new
        delta = new
    raise LadderError(
        f"bridge estimate did not converge after {BRIDGE_MAX_ITER} iterations "
        f"for ladder pair {pair_index}"
    )


def estimate_log_z(rbm, ladder, burn_in, sweeps, runs, seed=0):
    """Tempered-ladder bridge estimate of log Z with run-to-run spread.

    Each run restarts the ladder chains, burns in, then records the energy of
    every chain at every rung for ``sweeps`` sweeps (exchange on throughout).
    Adjacent-rung log-ratios come from ``bridge_log_ratio`` on the pooled
    records; their sum plus (n1 + n2) log 2 is the run's estimate.  Returns
    mean and standard deviation over ``runs``.
    """
    if burn_in < 1 or sweeps < 1 or runs < 1:
        raise ValueError("burn_in, sweeps and runs must all be >= 1")
    betas = ladder.betas
    n_chains = ladder.n_chains
    estimates = np.empty(runs)
    for r in range(runs):
        work = TemperingLadder.initialize(
            rbm, betas, n_chains, np.random.default_rng([seed, 1000 + r])
        )
        _sweep(rbm, work, burn_in)
        records = np.empty((sweeps, betas.size, n_chains))
        _sweep(rbm, work, sweeps, energy_out=records)
        log_z = (rbm.n1 + rbm.n2) * np.log(2.0)
        flat = records.transpose(1, 0, 2).reshape(betas.size, -1)
        for i in range(betas.size - 1):
            e_lo, e_hi = flat[i], flat[i + 1]
            log_z += bridge_log_ratio(
                betas[i] * e_lo,
                betas[i + 1] * e_lo,
                betas[i + 1] * e_hi,
                betas[i] * e_hi,
                pair_index=i,
            )
        estimates[r] = log_z
    return LogZEstimate(float(estimates.mean()), float(estimates.std(ddof=1)) if runs > 1 else 0.0, estimates)
