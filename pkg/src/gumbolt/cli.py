"""Command-line entry points: train, eval, logz, verify, sample."""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np


def _cmd_train(args):
    from gumbolt.trainer import TrainConfig, train

    config = TrainConfig.from_file(args.config)
    if args.data_dir:
        config.data_dir = args.data_dir
    result = train(config, resume=args.resume)
    print(f"finished at iteration {result.final_iteration}")
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_eval(args):
    from gumbolt.trainer import evaluate

    result = evaluate(
        args.ckpt,
        k=args.k,
        logz_preset=args.logz,
        data_dir=args.data_dir,
        out_csv=args.out,
    )
    print(f"log Z = {result.log_z:.4f} (std {result.log_z_std:.4f})")
    print(f"test NLL bound = {result.nll:.4f} +/- {result.nll_se:.4f}")
    for warning in result.warnings:
        print(f"warning: {warning}")
    return 0


def _cmd_logz(args):
    from gumbolt.partition import estimate_log_z, pilot_tune_ladder
    from gumbolt.trainer import LOGZ_PRESETS, load_checkpoint

    loaded = load_checkpoint(args.ckpt)
    preset = LOGZ_PRESETS[args.preset]
    ladder = pilot_tune_ladder(loaded.model.rbm, seed=args.seed)
    print(
        f"ladder: {ladder.betas.size} rungs, pilot exchange rates "
        f"{np.array2string(ladder.pilot_rates, precision=3)}"
    )
    estimate = estimate_log_z(
        loaded.model.rbm, ladder,
        preset["burn_in"], preset["sweeps"], preset["runs"], seed=args.seed,
    )
    print(f"log Z = {estimate.mean:.4f} (std {estimate.std:.4f})")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["run", "log_z"])
            for idx, value in enumerate(estimate.runs):
                writer.writerow([idx, f"{value:.6f}"])
            writer.writerow(["mean", f"{estimate.mean:.6f}"])
            writer.writerow(["std", f"{estimate.std:.6f}"])
        print(f"per-run estimates: {args.out}")
    return 0


def _cmd_verify(args):
    from gumbolt import verify

    report = verify.run(scope=args.scope, fast=args.fast)
    text = report.to_text()
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return 0


def _cmd_sample(args):
    from gumbolt.trainer import sample

    paths = sample(args.ckpt, args.n, args.out)
    print(f"wrote {len(paths)} images to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gumbolt",
        description="Discrete VAEs with RBM priors: training, evaluation, "
        "log-partition estimation, verification, sampling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the training loop from a config file")
    p_train.add_argument("--config", required=True, help="flat key = value config file")
    p_train.add_argument("--data-dir", default=None, help="dataset directory "
                         "(falls back to GUMBOLT_DATA_DIR)")
    p_train.add_argument("--resume", default=None, help="checkpoint to resume from")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="test-set likelihood bound for a checkpoint")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--k", type=int, default=None, help="importance samples (default: config eval_k)")
    p_eval.add_argument("--logz", choices=("desk", "paper"), default=None)
    p_eval.add_argument("--data-dir", default=None)
    p_eval.add_argument("--out", default=None, help="append a CSV result row here")
    p_eval.set_defaults(func=_cmd_eval)

    p_logz = sub.add_parser("logz", help="estimate the prior log-partition of a checkpoint")
    p_logz.add_argument("--ckpt", required=True)
    p_logz.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p_logz.add_argument("--seed", type=int, default=1234)
    p_logz.add_argument("--out", default=None, help="CSV of per-run estimates")
    p_logz.set_defaults(func=_cmd_logz)

    p_verify = sub.add_parser("verify", help="run the numerical property suites")
    p_verify.add_argument("--scope", choices=("all", "theorems", "grad", "logz"), default="all")
    p_verify.add_argument("--fast", action="store_true", help="shrunk smoke-test sizes")
    p_verify.add_argument("--out", default=None, help="write the report here")
    p_verify.set_defaults(func=_cmd_verify)

    p_sample = sub.add_parser("sample", help="decode prior samples to PGM images")
    p_sample.add_argument("--ckpt", required=True)
    p_sample.add_argument("--n", type=int, required=True)
    p_sample.add_argument("--out", required=True, help="output directory")
    p_sample.set_defaults(func=_cmd_sample)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
