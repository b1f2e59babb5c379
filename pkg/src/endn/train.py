"""Training loop, evaluation protocol and single-image denoising."""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import BatchStream, add_awgn, load_dir, load_image, save_image
from .errors import ConfigError, NumericError
from .losses import l1_loss, psnr, ssim, ssim_loss
from .model import ModelConfig, forward, init_params, validate_params
from .ops import add
from .optim import AdamState, adam_step
from .tensor import Tape

log = logging.getLogger(__name__)

BLIND_SIGMAS = (15.0, 25.0, 50.0)
LOG_HEADER = ("step", "total", "l1", "ssim", "psnr_eval", "ssim_eval")


@dataclass
class TrainConfig:
    sigma8: float = 25.0
    blind: bool = False
    batch_size: int = 16
    patch_size: int = 64
    max_steps: int = 1000
    eval_every: int = 500
    seed: int = 0
    lr: float = 1e-4
    checkpoint_path: str = "model.endn"
    log_path: str | None = "train_log.csv"
    eval_dir: str | None = None
    workers: int = 1
    augment: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be at least 1, got {self.max_steps}")
        if self.eval_every < 0:
            raise ConfigError(f"eval_every must be non-negative, got {self.eval_every}")
        if self.sigma8 < 0:
            raise ConfigError(f"sigma must be non-negative, got {self.sigma8}")
        if self.patch_size < 1:
            raise ConfigError(f"patch_size must be positive, got {self.patch_size}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")

    @property
    def sigmas(self) -> tuple[float, ...]:
        return BLIND_SIGMAS if self.blind else (float(self.sigma8),)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class StepStats:
    step: int
    total: float
    l1: float
    ssim: float
    psnr_eval: float | None = None
    ssim_eval: float | None = None

    def row(self) -> list[str]:
        def fmt(v):
            return "" if v is None else repr(float(v))
        return [str(self.step), fmt(self.total), fmt(self.l1), fmt(self.ssim), fmt(self.psnr_eval), fmt(self.ssim_eval)]


def train_step(params: dict[str, np.ndarray], adam: AdamState, noisy: np.ndarray, clean: np.ndarray,
               cfg: ModelConfig, step: int) -> tuple[StepStats, np.ndarray]:
    """forward -> l1 + SSIM -> backward -> Adam; returns stats and the pre-update output."""
    with Tape() as tape:
        tracked = tape.watch_all(params)
        out = forward(noisy, tracked, cfg)
        l1 = l1_loss(out, clean)
        ls = ssim_loss(out, clean)
        total = add(l1, ls)
    stats = StepStats(step, total.item(), l1.item(), ls.item())
    if not math.isfinite(stats.total):
        raise NumericError(f"non-finite loss at step {step}: total={stats.total} l1={stats.l1} ssim={stats.ssim}")
    grads = tape.gradient(total, tracked)
    adam_step(params, grads, adam)
    return stats, out.data


def _open_log(path, append: bool):
    if path is None:
        return None, None
    path = Path(path)
    fresh = not (append and path.exists())
    fh = open(path, "w" if fresh else "a", newline="")
    writer = csv.writer(fh)
    if fresh:
        writer.writerow(LOG_HEADER)
    return fh, writer


def train(train_cfg: TrainConfig, model_cfg: ModelConfig, data_dir, resume=None) -> tuple[Checkpoint, list[StepStats]]:
    """Run (or continue) training up to ``train_cfg.max_steps``.

    ``resume`` is a checkpoint (or path) written by a previous run; its
    parameters, Adam state, step counter and data-stream state are restored.
    """
    images = [img for _, img in load_dir(data_dir)]
    if images[0].channels != model_cfg.in_channels:
        raise ConfigError(f"{data_dir} holds {images[0].channels}-channel images, model expects {model_cfg.in_channels}")
    stream = BatchStream(images, train_cfg.batch_size, train_cfg.patch_size, train_cfg.sigmas,
                         train_cfg.seed, train_cfg.workers, train_cfg.augment)
    start = 0
    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        if ckpt.model_cfg != model_cfg:
            raise ConfigError("resume checkpoint was trained with a different model config")
        params = {k: v.copy() for k, v in ckpt.params.items()}
        adam = ckpt.adam if ckpt.adam is not None else AdamState(lr=train_cfg.lr)
        start = int(ckpt.meta.get("step", 0))
        if "stream_state" in ckpt.meta:
            stream.set_state(ckpt.meta["stream_state"])
    else:
        params = init_params(model_cfg, train_cfg.seed)
        adam = AdamState(lr=train_cfg.lr)

    eval_images = load_dir(train_cfg.eval_dir) if train_cfg.eval_dir else None
    history: list[StepStats] = []
    fh, writer = _open_log(train_cfg.log_path, append=resume is not None)
    ckpt = None
    try:
        for step in range(start + 1, train_cfg.max_steps + 1):
            batch = next(stream)
            stats, out = train_step(params, adam, batch.noisy, batch.clean, model_cfg, step)
            at_eval = step == train_cfg.max_steps or (train_cfg.eval_every and step % train_cfg.eval_every == 0)
            if at_eval:
                if eval_images is not None:
                    res = _evaluate_images(params, model_cfg, eval_images, train_cfg.sigma8, train_cfg.seed)
                    stats.psnr_eval, stats.ssim_eval = res["psnr"], res["ssim"]
                else:
                    clipped = np.clip(out, 0.0, 1.0)
                    stats.psnr_eval, stats.ssim_eval = psnr(clipped, batch.clean), ssim(clipped, batch.clean)
                meta = {"step": step, "train": dataclasses.asdict(train_cfg)}
                if train_cfg.workers == 1:
                    meta["stream_state"] = stream.get_state()
                ckpt = Checkpoint(model_cfg, params, adam, meta)
                save_checkpoint(ckpt, train_cfg.checkpoint_path)
                log.info("step %d total %.5f psnr %.2f", step, stats.total, stats.psnr_eval)
            history.append(stats)
            if writer is not None:
                writer.writerow(stats.row())
    finally:
        stream.close()
        if fh is not None:
            fh.close()
    if ckpt is None:
        # resume target already reached; nothing was run
        ckpt = Checkpoint(model_cfg, params, adam, {"step": start, "train": dataclasses.asdict(train_cfg)})
    return ckpt, history


# ------------------------------------------------------------------ evaluation

def image_seed(name: str, base_seed: int = 0) -> np.random.Generator:
    """Deterministic per-image noise generator derived from the file name."""
    return np.random.default_rng([zlib.crc32(name.encode("utf-8")), base_seed])


def run_model(params, cfg: ModelConfig, noisy: np.ndarray) -> np.ndarray:
    """Whole-image inference (no tiling), output clamped to [0, 1]."""
    out = forward(noisy.astype(np.float32), params, cfg).data
    return np.clip(out, 0.0, 1.0)


def _evaluate_images(params, cfg: ModelConfig, images, sigma8: float, seed: int = 0) -> dict:
    rows = []
    for name, img in images:
        if img.channels != cfg.in_channels:
            raise ConfigError(f"{name}: {img.channels}-channel image, model expects {cfg.in_channels}")
        clean = img.to_tensor4()
        noisy = add_awgn(clean, sigma8, image_seed(name, seed))
        out = run_model(params, cfg, noisy)
        rows.append({"image": name, "psnr": psnr(out, clean), "ssim": ssim(out, clean)})
    return {
        "psnr": float(np.mean([r["psnr"] for r in rows])),
        "ssim": float(np.mean([r["ssim"] for r in rows])),
        "rows": rows,
    }


def evaluate(checkpoint, data_dir, sigma8: float, csv_path=None, seed: int = 0) -> dict:
    """Mean PSNR / SSIM of the denoised images against their clean sources.

    Returns ``{"psnr", "ssim", "rows"}``; ``rows`` also goes to ``csv_path``.
    """
    if sigma8 < 0:
        raise ConfigError(f"sigma must be non-negative, got {sigma8}")
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    validate_params(ckpt.params, ckpt.model_cfg)
    res = _evaluate_images(ckpt.params, ckpt.model_cfg, load_dir(data_dir), sigma8, seed)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("image", "psnr", "ssim"))
            for r in res["rows"]:
                w.writerow((r["image"], repr(r["psnr"]), repr(r["ssim"])))
    return res


def denoise(checkpoint, in_path, out_path) -> np.ndarray:
    """Denoise one image file into ``out_path``; returns the clamped output."""
    if Path(in_path).resolve() == Path(out_path).resolve():
        raise ConfigError("output path must differ from the input path")
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    img = load_image(in_path)
    if img.channels != ckpt.model_cfg.in_channels:
        raise ConfigError(f"{in_path}: {img.channels}-channel image, model expects {ckpt.model_cfg.in_channels}")
    out = run_model(ckpt.params, ckpt.model_cfg, img.to_tensor4())
    save_image(out, out_path)
    return out
