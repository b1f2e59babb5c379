"""Command-line entry point: ``endn {train,denoise,evaluate,gradcheck,params}``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

from .errors import ConfigError, EndnError, EndnIOError

TRAIN_DEFAULTS = {
    "sigma": 25, "width": 64, "steps": 1000, "batch": 16, "patch": 64, "seed": 0,
    "out": "model.endn", "log": "train_log.csv", "eval_every": 500, "eval_data": None,
    "workers": 1, "lr": 1e-4, "blind": False,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _non_negative_float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v) or v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="endn", description="Ensemble-of-modules CNN image denoiser.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    t = sub.add_parser("train", help="train a model on a directory of clean images")
    t.add_argument("--data", required=True, metavar="DIR", help="directory of .png/.pgm/.ppm training images")
    t.add_argument("--sigma", type=int, choices=(15, 25, 50), help="AWGN std in 8-bit units (default 25)")
    t.add_argument("--width", type=_positive_int, help="feature width of every module (default 64)")
    t.add_argument("--steps", type=_positive_int, help="optimizer steps (default 1000)")
    t.add_argument("--batch", type=_positive_int, help="patches per batch (default 16)")
    t.add_argument("--patch", type=_positive_int, help="patch side length (default 64)")
    t.add_argument("--seed", type=int, help="RNG seed (default 0; ENDN_SEED overrides)")
    t.add_argument("--out", metavar="CKPT", help="checkpoint path (default model.endn)")
    t.add_argument("--log", metavar="CSV", help="metrics log path (default train_log.csv)")
    t.add_argument("--eval-every", type=int, help="checkpoint/eval interval in steps (default 500)")
    t.add_argument("--eval-data", metavar="DIR", help="held-out images for periodic eval (default: training batch)")
    t.add_argument("--workers", type=_positive_int, help="data-pipeline threads (default 1, deterministic)")
    t.add_argument("--lr", type=float, help="Adam learning rate (default 1e-4)")
    t.add_argument("--blind", action="store_true", default=None, help="mix sigma 15/25/50 per batch (default off)")
    t.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint written by train (default none)")
    t.add_argument("--config", metavar="JSON", help="JSON file of flag defaults; explicit flags win (default none)")

    d = sub.add_parser("denoise", help="denoise one image")
    d.add_argument("--ckpt", required=True, help="checkpoint path")
    d.add_argument("--in", dest="inp", required=True, metavar="IMG", help="noisy input image")
    d.add_argument("--out", required=True, metavar="IMG", help="output image path")

    e = sub.add_parser("evaluate", help="mean PSNR/SSIM on a directory of clean images")
    e.add_argument("--ckpt", required=True, help="checkpoint path")
    e.add_argument("--data", required=True, metavar="DIR", help="directory of clean images")
    e.add_argument("--sigma", type=_non_negative_float, default=25.0, help="AWGN std in 8-bit units (default 25)")
    e.add_argument("--csv", metavar="PATH", help="per-image results CSV (default none)")
    e.add_argument("--seed", type=int, default=0, help="base seed mixed into per-image noise seeds (default 0)")

    g = sub.add_parser("gradcheck", help="float64 finite-difference gradient suite")
    g.add_argument("--width", type=_positive_int, default=8, help="network width (default 8)")
    g.add_argument("--size", type=_positive_int, default=12, help="input side length (default 12)")
    g.add_argument("--tol", type=float, default=1e-4, help="max relative error allowed (default 1e-4)")
    g.add_argument("--samples", type=_positive_int, default=50, help="network parameters to perturb (default 50)")
    g.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")

    c = sub.add_parser("params", help="print the exact parameter count")
    c.add_argument("--width", type=_positive_int, default=64, help="feature width (default 64)")
    c.add_argument("--in-channels", type=int, choices=(1, 3), default=3, help="image channels (default 3)")
    return p


def _train_options(args) -> dict:
    opts = dict(TRAIN_DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                file_opts = json.load(fh)
        except OSError as e:
            raise EndnIOError(f"{args.config}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: invalid JSON ({e})") from e
        unknown = set(file_opts) - set(opts)
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {sorted(unknown)}")
        opts.update(file_opts)
    for key in TRAIN_DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = val
    env_seed = os.environ.get("ENDN_SEED")
    if env_seed is not None:
        try:
            opts["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"ENDN_SEED must be an integer, got {env_seed!r}") from None
    return opts


def _cmd_train(args) -> int:
    from .data import load_dir
    from .model import ModelConfig
    from .train import TrainConfig, train

    o = _train_options(args)
    channels = load_dir(args.data)[0][1].channels
    model_cfg = ModelConfig(in_channels=channels, base_width=int(o["width"]))
    train_cfg = TrainConfig(
        sigma8=float(o["sigma"]), blind=bool(o["blind"]), batch_size=int(o["batch"]), patch_size=int(o["patch"]),
        max_steps=int(o["steps"]), eval_every=int(o["eval_every"]), seed=int(o["seed"]), lr=float(o["lr"]),
        checkpoint_path=o["out"], log_path=o["log"], eval_dir=o["eval_data"], workers=int(o["workers"]),
    )
    ckpt, history = train(train_cfg, model_cfg, args.data, resume=args.resume)
    last = history[-1] if history else None
    if last is not None:
        print(f"step {last.step}: total {last.total:.5f}  l1 {last.l1:.5f}  ssim {last.ssim:.5f}")
    print(f"checkpoint: {train_cfg.checkpoint_path}")
    return 0


def _cmd_denoise(args) -> int:
    from .train import denoise

    denoise(args.ckpt, args.inp, args.out)
    return 0


def _cmd_evaluate(args) -> int:
    from .train import evaluate

    res = evaluate(args.ckpt, args.data, args.sigma, csv_path=args.csv, seed=args.seed)
    psnr_txt = "inf" if math.isinf(res["psnr"]) else f"{res['psnr']:.2f}"
    print(f"PSNR: {psnr_txt} dB  SSIM: {res['ssim']:.4f}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import network_check, op_suite

    results = op_suite(args.seed)
    results.append(network_check(args.width, args.size, samples=args.samples, seed=args.seed))
    for r in results:
        print(f"{r.name:32s} rel {r.max_rel_error:.3e}  worst coord {r.worst_coordinate:.3e}  ({r.checked} coords)")
    worst = max(r.max_rel_error for r in results)
    print(f"max relative error: {worst:.3e}")
    return 0 if worst < args.tol else 4


def _cmd_params(args) -> int:
    from .model import ModelConfig, count_params

    print(count_params(ModelConfig(in_channels=args.in_channels, base_width=args.width)))
    return 0


COMMANDS = {
    "train": _cmd_train,
    "denoise": _cmd_denoise,
    "evaluate": _cmd_evaluate,
    "gradcheck": _cmd_gradcheck,
    "params": _cmd_params,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except EndnError as e:
        print(f"endn: error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"endn: error: {e}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())
