"""Training orchestration: schedules, optimizer, the main loop, evaluation,

checkpointing with bit-exact resume, and model sampling."""

from __future__ import annotations

import csv
import dataclasses
import os
import time
from dataclasses import dataclass

import numpy as np

from gumbolt import checkpoint as ckpt_io
from gumbolt import kernels
from gumbolt.autodiff import GraphError
from gumbolt.data import BatchIterator, load_dataset
from gumbolt.model import GumboltVae, StructureSpec
from gumbolt.partition import estimate_log_z, pilot_tune_ladder
from gumbolt.rbm import PcdChains, advance_chains, pcd_negative_phase

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

LOGZ_PRESETS = {
    "desk": {"burn_in": 2000, "sweeps": 10000, "runs": 10, "std_warn": 0.02},
    "paper": {"burn_in": 20000, "sweeps": 100000, "runs": 20, "std_warn": 0.01},
}

METRIC_COLUMNS = [
    "iter",
    "lr",
    "kl_beta",
    "train_objective",
    "valid_relaxed",
    "valid_discrete",
    "logz_estimate",
    "wall_time",
]


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; the message names the last good checkpoint."""


@dataclass
class TrainConfig:
    """Run settings; defaults follow the full-scale protocol."""

    structure: str = "~ ~"
    dataset: str = "mnist"
    data_dir: str = ""
    n1: int = 0  # 0 = structure default
    n2: int = 0
    hidden_width: int = 200
    k: int = 1
    tau: float = 1.0 / 7.0
    total_iters: int = 1_000_000
    lr0: float = 3e-3
    lr_decay: float = 0.3
    lr_milestones: tuple = (0.6, 0.75, 0.95)
    kl_anneal_frac: float = 0.30
    batch_size: int = 100
    pcd_sweeps: int = 200
    pcd_chains: int = 0  # 0 = batch_size
    nw: bool = False
    seed: int = 0
    eval_k: int = 4000
    logz_preset: str = "desk"
    encoder_batch_norm: bool = True
    decoder_batch_norm: bool = True
    val_interval: int = 0  # 0 = total_iters // 100
    val_k: int = 20
    val_subset: int = 500
    checkpoint_interval: int = 0  # 0 = total_iters // 10
    toy_n: int = 2000
    init: str = "glorot"
    out_dir: str = "runs/gumbolt"

    def __post_init__(self):
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must lie in [0, 1)")
        if not 0.0 < self.kl_anneal_frac <= 1.0:
            raise ValueError("kl_anneal_frac must lie in (0, 1]")
        if any(not 0.0 < m <= 1.0 for m in self.lr_milestones):
            raise ValueError("lr milestones must lie in (0, 1]")
        if self.k < 1 or self.total_iters < 1 or self.batch_size < 1:
            raise ValueError("k, total_iters and batch_size must be positive")
        if self.logz_preset not in LOGZ_PRESETS:
            raise ValueError(f"unknown logz preset {self.logz_preset!r}")

    @property
    def effective_val_interval(self):
        return self.val_interval or max(1, self.total_iters // 100)

    @property
    def effective_checkpoint_interval(self):
        return self.checkpoint_interval or max(1, self.total_iters // 10)

    @property
    def effective_pcd_chains(self):
        return self.pcd_chains or self.batch_size

    def structure_spec(self):
        return StructureSpec.parse(
            self.structure, self.n1 or None, self.n2 or None, self.hidden_width
        )

    def to_file(self, path):
        with open(path, "w") as fh:
            for f in dataclasses.fields(self):
                value = getattr(self, f.name)
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                fh.write(f"{f.name} = {value}\n")

    @classmethod
    def from_file(cls, path):
        """Flat key = value text; '#' starts a comment."""
        raw = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key = value")
                key, value = (part.strip() for part in line.split("=", 1))
                raw[key] = value
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw):
        kwargs = {}
        by_name = {f.name: f for f in dataclasses.fields(cls)}
        for key, value in raw.items():
            if key not in by_name:
                raise ValueError(f"unknown config key {key!r}")
            if isinstance(value, str):
                kwargs[key] = _parse_value(by_name[key], value)
            else:
                kwargs[key] = tuple(value) if key == "lr_milestones" else value
        return cls(**kwargs)


def _parse_value(fld, text):
    if fld.type in ("int", int):
        return int(text)
    if fld.type in ("float", float):
        return float(text)
    if fld.type in ("bool", bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{fld.name}: expected a boolean, got {text!r}")
    if fld.type in ("tuple", tuple):
        return tuple(float(v) for v in text.split(",") if v.strip())
    return text


def lr_at(iteration, config):
    """Step-decayed learning rate at a 0-based iteration."""
    if not 0 <= iteration < config.total_iters:
        raise ValueError("iteration out of range")
    passed = sum(iteration >= m * config.total_iters for m in config.lr_milestones)
    return config.lr0 * config.lr_decay**passed


def kl_beta(iteration, config):
    """Linear warmup of the prior/entropy weight, reaching 1 at the

    annealing fraction of total iterations."""
    if not 0 <= iteration < config.total_iters:
        raise ValueError("iteration out of range")
    ramp = config.kl_anneal_frac * config.total_iters
    return min(1.0, iteration / ramp)


class AdamState:
    """First/second moment accumulators with bias correction."""

    def __init__(self, params):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr, frozen=()):
        """In-place update of every parameter; ``frozen`` names are skipped."""
        self.t += 1
        c1 = 1.0 - ADAM_BETA1**self.t
        c2 = 1.0 - ADAM_BETA2**self.t
        for name, p in params.items():
            if name in frozen:
                continue
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def adam_step(params, grads, state, lr, frozen=()):
    state.step(params, grads, lr, frozen)
    return params, state


@dataclass
class TrainResult:
    metrics: list
    metrics_path: str
    checkpoint_path: str
    final_iteration: int


def _validation_metrics(model, valid_images, config, iteration):
    """k-sample bound on a fixed validation subset, relaxed and discrete.

    Uses a derived rng so it never disturbs the training noise stream.
    Values exclude log Z (constant offset shared by both columns).
    """
    subset = valid_images[: config.val_subset].astype(np.float64)
    rng_r = np.random.default_rng([config.seed, 555, iteration])
    relaxed = model.objective(
        subset, config.val_k, config.tau, rng_r, kl_beta=1.0, training=False
    ).objective
    rng_d = np.random.default_rng([config.seed, 556, iteration])
    discrete = model.objective(
        subset, config.val_k, 0.0, rng_d, kl_beta=1.0, training=False
    ).objective
    return relaxed, discrete


def _save_checkpoint(path, config, model, adam, chains, iterator, iteration, rngs):
    tensors = {}
    for name, arr in model.parameters().items():
        tensors[f"param/{name}"] = arr
    for name in adam.m:
        tensors[f"adam/m/{name}"] = adam.m[name]
        tensors[f"adam/v/{name}"] = adam.v[name]
    bn_updates = {}
    for key, state in model.bn_states().items():
        tensors[f"bn/{key}.mean"] = state.mean
        tensors[f"bn/{key}.var"] = state.var
        bn_updates[key] = state.updates
    tensors["pcd/z1"] = chains.z1
    tensors["pcd/z2"] = chains.z2
    it_state = iterator.state()
    tensors["data/permutation"] = it_state["permutation"].astype(np.int64)
    meta = {
        "iteration": iteration,
        "adam_t": adam.t,
        "config": dataclasses.asdict(config),
        "rng": {name: ckpt_io.rng_state(gen) for name, gen in rngs.items()},
        "data_epoch": it_state["epoch"],
        "data_position": it_state["position"],
        "bn_updates": bn_updates,
        "backend": kernels.BACKEND,
    }
    tensors["__meta__"] = ckpt_io.pack_meta(meta)
    ckpt_io.write_tensors(path, tensors)


@dataclass
class LoadedCheckpoint:
    config: TrainConfig
    model: GumboltVae
    iteration: int
    tensors: dict
    meta: dict


def load_checkpoint(path):
    """Rebuild the model (and config) stored in a checkpoint file."""
    tensors = ckpt_io.read_tensors(path)
    meta = ckpt_io.unpack_meta(tensors["__meta__"])
    config = TrainConfig.from_dict(meta["config"])
    dataset_pixels = 16 if config.dataset == "toy" else 784
    model = GumboltVae(
        config.structure_spec(),
        n_pixels=dataset_pixels,
        init_rng=None,
        init="zeros",
        encoder_batch_norm=config.encoder_batch_norm,
        decoder_batch_norm=config.decoder_batch_norm,
    )
    for name, arr in model.parameters().items():
        np.copyto(arr, tensors[f"param/{name}"])
    for key, state in model.bn_states().items():
        np.copyto(state.mean, tensors[f"bn/{key}.mean"])
        np.copyto(state.var, tensors[f"bn/{key}.var"])
        state.updates = meta["bn_updates"][key]
    return LoadedCheckpoint(config, model, meta["iteration"], tensors, meta)


def train(config, resume=None):
    """Run the training loop, writing metrics CSV and periodic checkpoints.

    Per iteration: draw a minibatch, build the k-sample relaxed objective
    with the annealed prior weight, backpropagate, add the persistent-chain
    estimate of the log-partition gradient to the prior parameters (masked
    for frozen couplings), and apply one optimizer step.  ``resume`` replays
    from a checkpoint bit-exactly.
    """
    os.makedirs(config.out_dir, exist_ok=True)
    dataset = load_dataset(
        config.dataset, config.data_dir or None, seed=config.seed, toy_n=config.toy_n
    )
    spec = config.structure_spec()
    frozen = ("rbm.w",) if config.nw else ()

    if resume is None:
        seeds = np.random.SeedSequence(config.seed).spawn(4)
        init_rng, noise_rng, pcd_rng, data_rng = (np.random.default_rng(s) for s in seeds)
        model = GumboltVae(
            spec,
            n_pixels=dataset.n_pixels,
            init_rng=init_rng,
            init=config.init,
            encoder_batch_norm=config.encoder_batch_norm,
            decoder_batch_norm=config.decoder_batch_norm,
        )
        adam = AdamState(model.parameters())
        chains = PcdChains.initialize(model.rbm, config.effective_pcd_chains, pcd_rng)
        iterator = BatchIterator(dataset.split("train"), config.batch_size, data_rng)
        start_iter = 0
        metrics = []
    else:
        loaded = load_checkpoint(resume)
        stored = dataclasses.asdict(loaded.config)
        current = dataclasses.asdict(config)
        if stored != current:
            raise ValueError("resume config differs from the checkpointed one")
        if loaded.meta["backend"] != kernels.BACKEND:
            import warnings

            warnings.warn(
                "checkpoint was written with the "
                f"{loaded.meta['backend']} backend but {kernels.BACKEND} is active; "
                "trajectories may drift by floating-point ulps",
                RuntimeWarning,
            )
        model = loaded.model
        adam = AdamState(model.parameters())
        for name in adam.m:
            np.copyto(adam.m[name], loaded.tensors[f"adam/m/{name}"])
            np.copyto(adam.v[name], loaded.tensors[f"adam/v/{name}"])
        adam.t = loaded.meta["adam_t"]
        noise_rng = ckpt_io.restore_rng(loaded.meta["rng"]["noise"])
        pcd_rng = ckpt_io.restore_rng(loaded.meta["rng"]["pcd"])
        data_rng = ckpt_io.restore_rng(loaded.meta["rng"]["data"])
        chains = PcdChains(
            loaded.tensors["pcd/z1"].copy(), loaded.tensors["pcd/z2"].copy(), pcd_rng
        )
        iterator = BatchIterator(
            dataset.split("train"),
            config.batch_size,
            data_rng,
            state={
                "epoch": loaded.meta["data_epoch"],
                "position": loaded.meta["data_position"],
                "permutation": loaded.tensors["data/permutation"],
            },
        )
        start_iter = loaded.iteration
        metrics = []

    params = model.parameters()
    valid_images = dataset.split("valid")
    metrics_path = os.path.join(config.out_dir, "metrics.csv")
    mode = "a" if resume is not None and os.path.exists(metrics_path) else "w"
    csv_fh = open(metrics_path, mode, newline="")
    writer = csv.writer(csv_fh)
    if mode == "w":
        writer.writerow(METRIC_COLUMNS)
    last_ckpt = resume or ""
    started = time.time()

    def checkpoint_path(iteration):
        return os.path.join(config.out_dir, f"ckpt_{iteration:08d}.gblt")

    if resume is None:
        relaxed, discrete = _validation_metrics(model, valid_images, config, 0)
        row = {
            "iter": 0,
            "lr": lr_at(0, config),
            "kl_beta": kl_beta(0, config),
            "train_objective": "",
            "valid_relaxed": relaxed,
            "valid_discrete": discrete,
            "logz_estimate": "",
            "wall_time": 0.0,
        }
        metrics.append(row)
        writer.writerow([row[c] for c in METRIC_COLUMNS])

    try:
        for iteration in range(start_iter, config.total_iters):
            lr = lr_at(iteration, config)
            beta = kl_beta(iteration, config)
            x = iterator.next_batch().astype(np.float64)
            value = model.objective(
                x, config.k, config.tau, noise_rng, kl_beta=beta, training=True
            )
            if not np.isfinite(value.loss):
                raise FloatingPointError(f"non-finite loss at iteration {iteration}")
            grads = value.graph.backward(value.loss_node)
            negative = pcd_negative_phase(model.rbm, chains, config.pcd_sweeps)
            # d(loss)/d(theta) picks up +beta * d(log Z)/d(theta)
            grads["rbm.a"] = grads["rbm.a"] + beta * negative["grad_a"]
            grads["rbm.b"] = grads["rbm.b"] + beta * negative["grad_b"]
            if not config.nw:
                grads["rbm.w"] = grads["rbm.w"] + beta * negative["grad_w"]
            adam.step(params, grads, lr, frozen=frozen)

            done = iteration + 1
            if done % config.effective_val_interval == 0 or done == config.total_iters:
                relaxed, discrete = _validation_metrics(model, valid_images, config, done)
                row = {
                    "iter": done,
                    "lr": lr,
                    "kl_beta": beta,
                    "train_objective": value.objective,
                    "valid_relaxed": relaxed,
                    "valid_discrete": discrete,
                    "logz_estimate": "",
                    "wall_time": time.time() - started,
                }
                metrics.append(row)
                writer.writerow([row[c] for c in METRIC_COLUMNS])
                csv_fh.flush()
            if done % config.effective_checkpoint_interval == 0 or done == config.total_iters:
                last_ckpt = checkpoint_path(done)
                _save_checkpoint(
                    last_ckpt,
                    config,
                    model,
                    adam,
                    chains,
                    iterator,
                    done,
                    {"noise": noise_rng, "pcd": pcd_rng, "data": data_rng},
                )
    except (FloatingPointError, GraphError) as exc:
        csv_fh.close()
        raise TrainingDiverged(
            f"{exc}; last good checkpoint: {last_ckpt or 'none written'}"
        ) from exc
    csv_fh.close()
    return TrainResult(metrics, metrics_path, last_ckpt, config.total_iters)


@dataclass
class EvalResult:
    nll: float
    nll_se: float
    log_z: float
    log_z_std: float
    exchange_rates: np.ndarray
    warnings: list


def evaluate(ckpt_path, k=None, logz_preset=None, data_dir=None, out_csv=None,
             seed=1234, row_chunk=100, sample_chunk=100):
    """Test-set negative log-likelihood bound for a checkpointed model.

    Estimates log Z with the tempered-ladder pipeline at the chosen preset,
    then evaluates the k-sample discrete bound over the test split in
    memory-bounded chunks.  Returns the NLL mean +- standard error and
    records a warning when the log Z spread exceeds the preset threshold.
    """
    loaded = load_checkpoint(ckpt_path)
    config = loaded.config
    k = k or config.eval_k
    preset_name = logz_preset or config.logz_preset
    preset = LOGZ_PRESETS[preset_name]
    dataset = load_dataset(
        config.dataset, data_dir or config.data_dir or None,
        seed=config.seed, toy_n=config.toy_n,
    )
    ladder = pilot_tune_ladder(loaded.model.rbm, seed=seed)
    estimate = estimate_log_z(
        loaded.model.rbm,
        ladder,
        preset["burn_in"],
        preset["sweeps"],
        preset["runs"],
        seed=seed,
    )
    warnings_list = []
    if estimate.std > preset["std_warn"]:
        warnings_list.append(
            f"log Z spread {estimate.std:.4f} exceeds the {preset_name} preset "
            f"threshold {preset['std_warn']}"
        )
    test = dataset.split("test").astype(np.float64)
    bounds = np.empty(len(test))
    rng = np.random.default_rng([seed, 99])
    for start in range(0, len(test), row_chunk):
        rows = test[start : start + row_chunk]
        bounds[start : start + len(rows)] = loaded.model.discrete_bound(
            rows, k, estimate.mean, rng, chunk_size=sample_chunk
        )
    if np.any(bounds > 0):
        warnings_list.append("likelihood bound exceeded 0 for some datapoints")
    nll = float(-bounds.mean())
    nll_se = float(bounds.std(ddof=1) / np.sqrt(len(bounds)))
    result = EvalResult(
        nll, nll_se, estimate.mean, estimate.std, ladder.pilot_rates, warnings_list
    )
    if out_csv:
        new = not os.path.exists(out_csv)
        with open(out_csv, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(
                    ["dataset", "structure", "train_k", "eval_k", "nll", "nll_se",
                     "log_z", "log_z_std", "warnings"]
                )
            writer.writerow(
                [config.dataset, config.structure, config.k, k,
                 f"{nll:.4f}", f"{nll_se:.4f}", f"{estimate.mean:.4f}",
                 f"{estimate.std:.4f}", "; ".join(warnings_list)]
            )
    return result


def sample(ckpt_path, n, out_dir, burn_in=1000, seed=4321):
    """Draw prior samples and decode them to PGM images.

    Runs ``burn_in`` block sweeps on ``n`` fresh chains, decodes the final
    states to pixel means, and writes one 8-bit PGM per sample.  Returns the
    written paths (none when n = 0).
    """
    if n == 0:
        return []
    loaded = load_checkpoint(ckpt_path)
    rbm = loaded.model.rbm
    chains = PcdChains.initialize(rbm, n, np.random.default_rng([seed]))
    advance_chains(rbm, chains, burn_in)
    latents = np.concatenate(
        [chains.z1.astype(np.float64), chains.z2.astype(np.float64)], axis=1
    )
    means = loaded.model.decode_mean(latents)
    side = int(round(np.sqrt(means.shape[1])))
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for idx, mean in enumerate(means):
        path = os.path.join(out_dir, f"sample_{idx:04d}.pgm")
        pixels = np.clip(np.round(mean * 255.0), 0, 255).astype(np.uint8)
        with open(path, "wb") as fh:
            fh.write(f"P5\n{side} {side}\n255\n".encode("ascii"))
            fh.write(pixels.tobytes())
        paths.append(path)
    return paths
