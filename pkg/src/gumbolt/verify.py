"""Numerical verification suites.

Property checks that the shipped implementation honors its structural
claims: relaxed-energy extrema sit on hypercube vertices, the discrete
normalizer dominates the relaxed one, analytic gradients match finite
differences (including the full training loss with an exact log-partition
term), the sampled log-partition gradient is unbiased, and the tempered
bridge estimator reproduces enumerable log-partitions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from gumbolt.autodiff import Graph, grad_check
from gumbolt.model import GumboltVae, StructureSpec
from gumbolt.partition import estimate_log_z, pilot_tune_ladder
from gumbolt.rbm import (
    PcdChains,
    Rbm,
    energy,
    enumerate_states,
    exact_log_partition,
    pcd_negative_phase,
)

SCOPES = ("all", "theorems", "grad", "logz")


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class VerifyReport:
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def to_text(self):
        lines = [
            f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}" for c in self.checks
        ]
        n_fail = sum(not c.passed for c in self.checks)
        lines.append(f"summary: {len(self.checks) - n_fail}/{len(self.checks)} checks passed")
        return "\n".join(lines)


def _random_small_rbm(rng, max_units=6):
    n1 = int(rng.integers(1, max_units))
    n2 = int(rng.integers(1, max_units + 1 - n1))
    return Rbm.random(n1, n2, rng, weight_scale=1.0, bias_scale=0.5)


def extrema_suite(n_models=100, seed=7, grid_step=0.25):
    """Min and max of the relaxed energy over a cube grid must be attained

    at binary vertices, for random small models."""
    rng = np.random.default_rng(seed)
    failures = []
    for idx in range(n_models):
        rbm = _random_small_rbm(rng)
        n = rbm.n1 + rbm.n2
        axis = np.arange(0.0, 1.0 + 1e-9, grid_step)
        grid = np.array(list(itertools.product(axis, repeat=n)))
        values = energy(rbm, grid[:, : rbm.n1], grid[:, rbm.n1 :])
        vertex_mask = np.all((grid == 0.0) | (grid == 1.0), axis=1)
        tol = 1e-12 * max(1.0, np.abs(values).max())
        min_ok = values[vertex_mask].min() - values.min() <= tol
        max_ok = values.max() - values[vertex_mask].max() <= tol
        if not (min_ok and max_ok):
            failures.append(idx)
    return Check(
        "relaxed-energy extrema on vertices",
        not failures,
        f"{n_models - len(failures)}/{n_models} models"
        + (f"; failing indices {failures}" if failures else ""),
    )


def lower_bound_suite(n_models=100, n_mc=1_000_000, seed=11, min_passes=None):
    """The relaxed normalizer (cube integral of exp(-E)), measured by Monte

    Carlo with a 99% CI, must not exceed the discrete normalizer."""
    if min_passes is None:
        min_passes = n_models - 1
    rng = np.random.default_rng(seed)
    passes = 0
    details = []
    for idx in range(n_models):
        rbm = _random_small_rbm(rng)
        n = rbm.n1 + rbm.n2
        u = rng.uniform(size=(n_mc, n))
        weights = np.exp(-energy(rbm, u[:, : rbm.n1], u[:, rbm.n1 :]))
        mean = weights.mean()
        upper = mean + 2.576 * weights.std(ddof=1) / np.sqrt(n_mc)
        z_exact = np.exp(exact_log_partition(rbm))
        if upper <= z_exact:
            passes += 1
        else:
            details.append(f"model {idx}: CI upper {upper:.4f} vs Z {z_exact:.4f}")
    return Check(
        "relaxed normalizer below discrete normalizer",
        passes >= min_passes,
        f"{passes}/{n_models} CI-consistent" + ("; " + "; ".join(details) if details else ""),
    )


# -- gradient checks ----------------------------------------------------------


class ReplayRng:
    """Replays pre-drawn uniforms so repeated evaluations share their noise."""

    def __init__(self, draws):
        self._draws = list(draws)
        self._next = 0

    @classmethod
    def record(cls, rng, shapes):
        return cls([rng.uniform(size=s) for s in shapes])

    def uniform(self, size):
        draw = self._draws[self._next % len(self._draws)]
        if tuple(draw.shape) != tuple(size):
            raise ValueError(f"replay shape {draw.shape} != requested {size}")
        self._next += 1
        return draw

    def rewind(self):
        self._next = 0


def _primitive_checks(seed=3, n_inputs=100, tol=1e-5):
    """Central-difference validation of every graph primitive."""
    rng = np.random.default_rng(seed)

    def feed(**arrays):
        return {k: np.asarray(v) for k, v in arrays.items()}

    def bn_fn(training):
        def fn(g, t):
            from gumbolt.autodiff import BatchNormState

            state = BatchNormState.create(t["x"].value.shape[1])
            state.mean = np.full(state.mean.shape, 0.1)
            state.var = np.full(state.var.shape, 0.8)
            h = g.batch_norm(t["x"], t["gamma"], t["beta"], state, training)
            return g.mean(g.mul(h, h))

        return fn

    cases = {
        "add": (
            lambda g, t: g.mean(g.mul(g.add(t["x"], t["y"]), t["x"])),
            lambda: feed(x=rng.standard_normal((2, 3)), y=rng.standard_normal((2, 3))),
        ),
        "sub": (
            lambda g, t: g.mean(g.mul(g.sub(t["x"], t["y"]), t["y"])),
            lambda: feed(x=rng.standard_normal((2, 3)), y=rng.standard_normal((2, 3))),
        ),
        "multiply": (
            lambda g, t: g.mean(g.mul(t["x"], t["y"])),
            lambda: feed(x=rng.standard_normal((2, 3)), y=rng.standard_normal((2, 3))),
        ),
        "scale": (
            lambda g, t: g.mean(g.scale(t["x"], 1.7)),
            lambda: feed(x=rng.standard_normal((2, 3))),
        ),
        "matmul": (
            lambda g, t: g.mean(g.matmul(t["x"], t["y"])),
            lambda: feed(x=rng.standard_normal((2, 3)), y=rng.standard_normal((3, 2))),
        ),
        "affine": (
            lambda g, t: g.mean(g.affine(t["x"], t["w"], t["b"])),
            lambda: feed(
                x=rng.standard_normal((3, 2)),
                w=rng.standard_normal((2, 2)),
                b=rng.standard_normal(2),
            ),
        ),
        "sigmoid": (
            lambda g, t: g.mean(g.sigmoid(t["x"])),
            lambda: feed(x=2.0 * rng.standard_normal((2, 3))),
        ),
        "tanh": (
            lambda g, t: g.mean(g.tanh(t["x"])),
            lambda: feed(x=2.0 * rng.standard_normal((2, 3))),
        ),
        "log": (
            lambda g, t: g.mean(g.log(t["x"])),
            lambda: feed(x=0.5 + rng.uniform(size=(2, 3))),
        ),
        "exp": (
            lambda g, t: g.mean(g.exp(t["x"])),
            lambda: feed(x=rng.standard_normal((2, 3))),
        ),
        "softplus": (
            lambda g, t: g.mean(g.softplus(t["x"])),
            lambda: feed(x=3.0 * rng.standard_normal((2, 3))),
        ),
        "logsumexp": (
            lambda g, t: g.mean(g.logsumexp(t["x"], axis=1)),
            lambda: feed(x=3.0 * rng.standard_normal((2, 4))),
        ),
        "sum": (
            lambda g, t: g.mean(g.mul(g.sum(t["x"], axis=1, keepdims=True), t["y"])),
            lambda: feed(x=rng.standard_normal((3, 2)), y=rng.standard_normal((3, 1))),
        ),
        "mean": (
            lambda g, t: g.mean(t["x"]),
            lambda: feed(x=rng.standard_normal((2, 3))),
        ),
        "reshape": (
            lambda g, t: g.mean(g.mul(g.reshape(t["x"], (3, 2)), g.reshape(t["x"], (3, 2)))),
            lambda: feed(x=rng.standard_normal((2, 3))),
        ),
        "repeat_rows": (
            lambda g, t: g.mean(g.mul(g.repeat_rows(t["x"], 3), g.repeat_rows(t["x"], 3))),
            lambda: feed(x=rng.standard_normal((2, 3))),
        ),
        "concat": (
            lambda g, t: g.mean(g.mul(g.concat([t["x"], t["y"]]), g.concat([t["x"], t["y"]]))),
            lambda: feed(x=rng.standard_normal((2, 2)), y=rng.standard_normal((2, 3))),
        ),
        "slice": (
            lambda g, t: g.mean(g.slice_cols(t["x"], 1, 3)),
            lambda: feed(x=rng.standard_normal((2, 4))),
        ),
        "batch_norm_train": (bn_fn(True), lambda: feed(
            x=rng.standard_normal((8, 3)),
            gamma=0.5 + rng.uniform(size=3),
            beta=rng.standard_normal(3),
        )),
        "batch_norm_eval": (bn_fn(False), lambda: feed(
            x=rng.standard_normal((8, 3)),
            gamma=0.5 + rng.uniform(size=3),
            beta=rng.standard_normal(3),
        )),
    }
    checks = []
    for name, (fn, make) in cases.items():
        worst = 0.0
        for _ in range(n_inputs):
            worst = max(worst, grad_check(fn, make(), step=1e-5))
        checks.append(
            Check(f"gradient of {name}", worst < tol, f"max relative error {worst:.3e}")
        )
    return checks


def _toy_model(seed=0):
    """2+2 latent units over 4 pixels, linear everywhere: small enough to

    enumerate and finite-difference exhaustively."""
    spec = StructureSpec(("-",), 2, 2, hidden_width=8)
    rng = np.random.default_rng(seed)
    model = GumboltVae(spec, n_pixels=4, init_rng=rng,
                       encoder_batch_norm=False, decoder_batch_norm=False)
    model.rbm.a[:] = 0.3 * rng.standard_normal(2)
    model.rbm.b[:] = 0.3 * rng.standard_normal(2)
    model.rbm.w[:] = 0.5 * rng.standard_normal((2, 2))
    return model


def exact_log_partition_node(g, model):
    """Differentiable exact log Z of a tiny prior, built from graph ops."""
    n1, n2 = model.rbm.n1, model.rbm.n2
    s1 = enumerate_states(n1)
    s2 = enumerate_states(n2)
    z1_all = np.repeat(s1, len(s2), axis=0)
    z2_all = np.tile(s2, (len(s1), 1))
    neg_e = model._neg_energy_node(g, g.constant(z1_all), g.constant(z2_all))
    return g.reshape(g.logsumexp(g.reshape(neg_e, (1, len(z1_all))), axis=1), ())


def full_loss_gradients(model, x, k, tau, replay, kl_scale=1.0):
    """Loss with the exact log-partition term, its value and all gradients."""
    replay.rewind()
    value = model.objective(x, k, tau, replay, kl_beta=kl_scale, training=False)
    g = value.graph
    log_z = exact_log_partition_node(g, model)
    total = g.add(g.reshape(value.loss_node, ()), g.scale(log_z, kl_scale))
    return float(total.value), g.backward(total)


def full_loss_check(seed=5, tol=1e-4, step=1e-5):
    """Finite-difference check of the complete training loss (including the

    log-partition term) with frozen noise, over every parameter."""
    model = _toy_model(seed)
    rng = np.random.default_rng(seed + 1)
    x = (rng.uniform(size=(3, 4)) < 0.4).astype(np.float64)
    k = 3
    tau = 1.0 / 7.0
    replay = ReplayRng.record(rng, [(3, k, 4)])
    _, grads = full_loss_gradients(model, x, k, tau, replay)
    worst = 0.0
    worst_name = ""
    for name, arr in model.parameters().items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up, _ = full_loss_gradients(model, x, k, tau, replay)
            flat[i] = orig - step
            down, _ = full_loss_gradients(model, x, k, tau, replay)
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            analytic = grads[name].reshape(-1)[i]
            err = abs(analytic - numeric) / max(1.0, abs(analytic))
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return Check(
        "gradient of full training loss",
        worst < tol,
        f"max relative error {worst:.3e} at {worst_name}",
    )


def logz_gradient_check(seed=21, n_chains=1000, n_sweeps=1000, fd_step=1e-4):
    """The persistent-chain moment estimate of grad log Z must agree with

    central differences of the exact log-partition within 3 standard errors
    on every coordinate."""
    rng = np.random.default_rng(seed)
    rbm = Rbm.random(4, 4, rng, weight_scale=0.7, bias_scale=0.3)
    chains = PcdChains.initialize(rbm, n_chains, np.random.default_rng(seed + 1))
    est = pcd_negative_phase(rbm, chains, n_sweeps)
    z1 = chains.z1.astype(np.float64)
    z2 = chains.z2.astype(np.float64)
    se = {
        "grad_a": z1.std(axis=0, ddof=1) / np.sqrt(n_chains),
        "grad_b": z2.std(axis=0, ddof=1) / np.sqrt(n_chains),
        "grad_w": np.einsum("cj,ci->cji", z2, z1).std(axis=0, ddof=1) / np.sqrt(n_chains),
    }

    def fd(arr, idx):
        orig = arr[idx]
        arr[idx] = orig + fd_step
        up = exact_log_partition(rbm)
        arr[idx] = orig - fd_step
        down = exact_log_partition(rbm)
        arr[idx] = orig
        return (up - down) / (2.0 * fd_step)

    worst = 0.0
    for key, arr in (("grad_a", rbm.a), ("grad_b", rbm.b), ("grad_w", rbm.w)):
        it = np.ndindex(arr.shape)
        for idx in it:
            exact = fd(arr, idx)
            sigma = max(se[key][idx], 1e-12)
            worst = max(worst, abs(est[key][idx] - exact) / sigma)
    return Check(
        "sampled log-partition gradient",
        worst <= 3.0,
        f"max deviation {worst:.2f} standard errors",
    )


def logz_estimation_suite(n_models=10, seed=31, burn_in=2000, sweeps=10000, runs=10,
                          err_tol=0.03, std_tol=0.02, rate_band=(0.35, 0.65)):
    """Tempered-bridge estimates versus enumeration on random mid-size models."""
    checks = []
    for idx in range(n_models):
        rbm = Rbm.random(8, 8, np.random.default_rng([seed, idx]), weight_scale=0.5)
        exact = exact_log_partition(rbm)
        ladder = pilot_tune_ladder(rbm, seed=seed * 1000 + idx)
        rates = ladder.pilot_rates
        estimate = estimate_log_z(rbm, ladder, burn_in, sweeps, runs, seed=seed * 77 + idx)
        err = abs(estimate.mean - exact)
        rates_ok = bool(np.all((rates >= rate_band[0]) & (rates <= rate_band[1])))
        ok = err <= err_tol and estimate.std <= std_tol and rates_ok
        checks.append(
            Check(
                f"log-partition estimate, model {idx}",
                ok,
                f"err {err:.4f} (tol {err_tol}), std {estimate.std:.4f} (tol {std_tol}), "
                f"{rates.size} exchange rates in [{rates.min():.2f}, {rates.max():.2f}]",
            )
        )
    return checks


def run(scope="all", fast=False):
    """Execute the requested suites and collect a report.

    ``fast`` shrinks the model counts for smoke tests; acceptance runs use
    the defaults.
    """
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    checks = []
    if scope in ("all", "theorems"):
        checks.append(extrema_suite(10 if fast else 100))
        checks.append(lower_bound_suite(5 if fast else 100, 100_000 if fast else 1_000_000))
    if scope in ("all", "grad"):
        checks.extend(_primitive_checks(n_inputs=5 if fast else 100))
        checks.append(full_loss_check())
        checks.append(logz_gradient_check(n_chains=200 if fast else 1000,
                                          n_sweeps=100 if fast else 1000))
    if scope in ("all", "logz"):
        if fast:
            checks.extend(
                logz_estimation_suite(
                    2, burn_in=500, sweeps=2000, runs=4, err_tol=0.1, std_tol=0.1
                )
            )
        else:
            checks.extend(logz_estimation_suite(10))
    return VerifyReport(checks)
