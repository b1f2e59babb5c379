import csv
import math

import numpy as np
import pytest
from PIL import Image

from endn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from endn.errors import ConfigError, NumericError
from endn.model import ModelConfig, forward, init_params, receptive_radius, zero_params
from endn.optim import AdamState
from endn.train import LOG_HEADER, TrainConfig, denoise, evaluate, run_model, train, train_step

from conftest import write_gray

TINY = ModelConfig(in_channels=1, base_width=4)
NOISY_PSNR_25 = 20.1720034352384  # 10 log10(255^2 / 25^2)


def _cfg(tmp_path, **kw):
    base = dict(batch_size=2, patch_size=16, max_steps=3, eval_every=2, seed=0,
                checkpoint_path=str(tmp_path / "m.endn"), log_path=str(tmp_path / "log.csv"))
    base.update(kw)
    return TrainConfig(**base)


def _zero_ckpt(tmp_path, cfg=TINY):
    path = tmp_path / "zero.endn"
    save_checkpoint(Checkpoint(cfg, zero_params(cfg)), path)
    return path


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(max_steps=0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochs": 3})
    assert TrainConfig(blind=True).sigmas == (15.0, 25.0, 50.0)
    assert TrainConfig(sigma8=50).sigmas == (50.0,)


def test_smoke_one_step(tmp_path, smooth_dir):
    ckpt, hist = train(_cfg(tmp_path, max_steps=1), TINY, smooth_dir)
    assert len(hist) == 1 and math.isfinite(hist[0].total)
    back = load_checkpoint(tmp_path / "m.endn")
    assert back.meta["step"] == 1 and back.adam.t == 1
    for k in ckpt.params:
        np.testing.assert_array_equal(back.params[k], ckpt.params[k])


def test_log_rows(tmp_path, smooth_dir):
    _, hist = train(_cfg(tmp_path, max_steps=5), TINY, smooth_dir)
    with open(tmp_path / "log.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == LOG_HEADER
    assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 4, 5]
    evald = [r for r in rows[1:] if r[4]]
    assert [int(r[0]) for r in evald] == [2, 4, 5]
    assert all(math.isfinite(float(v)) for r in rows[1:] for v in r[1:4])


def test_eval_dir_used(tmp_path, smooth_dir):
    _, hist = train(_cfg(tmp_path, max_steps=2, eval_dir=str(smooth_dir)), TINY, smooth_dir)
    assert hist[-1].psnr_eval is not None and hist[-1].ssim_eval is not None


def test_empty_data_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(ConfigError):
        train(_cfg(tmp_path), TINY, tmp_path / "empty")


def test_channel_mismatch(tmp_path, smooth_dir):
    with pytest.raises(ConfigError):
        train(_cfg(tmp_path), ModelConfig(in_channels=3, base_width=4), smooth_dir)


def test_non_finite_loss_aborts_naming_step():
    p = init_params(TINY, 0)
    p["tail.bias"][:] = np.nan
    x = np.full((1, 1, 12, 12), 0.5, np.float32)
    with pytest.raises(NumericError, match="step 7"):
        train_step(p, AdamState(), x, x, TINY, 7)


def test_blind_mixes_sigmas(tmp_path, smooth_dir):
    from endn.data import BatchStream, load_dir
    imgs = [img for _, img in load_dir(smooth_dir)]
    s = BatchStream(imgs, 1, 8, TrainConfig(blind=True).sigmas, seed=0)
    assert {next(s).sigma for _ in range(40)} == {15.0, 25.0, 50.0}


def test_zero_model_evaluate(tmp_path, smooth_dir):
    ck = _zero_ckpt(tmp_path)
    res = evaluate(ck, smooth_dir, 25, csv_path=tmp_path / "e.csv")
    assert abs(res["psnr"] - NOISY_PSNR_25) < 0.3
    with open(tmp_path / "e.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["image", "psnr", "ssim"] and len(rows) == 1 + 3
    clean = evaluate(ck, smooth_dir, 0)
    assert clean["psnr"] == math.inf and clean["ssim"] == pytest.approx(1.0, abs=1e-7)


def test_evaluate_is_deterministic_and_side_effect_free(tmp_path, smooth_dir):
    ckpt = Checkpoint(TINY, init_params(TINY, 3))
    before = {k: v.copy() for k, v in ckpt.params.items()}
    a = evaluate(ckpt, smooth_dir, 25)
    b = evaluate(ckpt, smooth_dir, 25)
    assert a["psnr"] == b["psnr"]
    for k in before:
        np.testing.assert_array_equal(ckpt.params[k], before[k])


def test_evaluate_channel_mismatch(tmp_path, smooth_dir):
    ck = _zero_ckpt(tmp_path, ModelConfig(in_channels=3, base_width=4))
    with pytest.raises(ConfigError):
        evaluate(ck, smooth_dir, 25)


def test_denoise_zero_model_identity(tmp_path, rng):
    arr = rng.integers(0, 256, (21, 30), dtype=np.uint8)
    write_gray(tmp_path / "in.png", arr)
    raw = (tmp_path / "in.png").read_bytes()
    denoise(_zero_ckpt(tmp_path), tmp_path / "in.png", tmp_path / "out.png")
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "out.png")), arr)
    assert (tmp_path / "in.png").read_bytes() == raw
    with pytest.raises(ConfigError):
        denoise(_zero_ckpt(tmp_path), tmp_path / "in.png", tmp_path / "in.png")


def test_interior_matches_patch_inference(rng):
    cfg = ModelConfig(in_channels=1, base_width=8)
    p = init_params(cfg, 1)
    img = rng.uniform(0, 1, (1, 1, 96, 96)).astype(np.float32)
    full = run_model(p, cfg, img)
    y0, x0, size = 20, 30, 56
    patch = run_model(p, cfg, img[:, :, y0:y0 + size, x0:x0 + size])
    r = receptive_radius(cfg)
    inner = slice(r, size - r)
    sub = full[:, :, y0:y0 + size, x0:x0 + size]
    assert np.abs(sub[:, :, inner, inner] - patch[:, :, inner, inner]).max() < 1e-5
    # an 8 px margin still sees the patch border at this radius
    eight = slice(8, size - 8)
    assert np.abs(sub[:, :, eight, eight] - patch[:, :, eight, eight]).max() > 1e-5


def test_resume_short(tmp_path, smooth_dir):
    full, _ = train(_cfg(tmp_path, max_steps=4, eval_every=2), TINY, smooth_dir)
    half_cfg = _cfg(tmp_path, max_steps=2, eval_every=2, checkpoint_path=str(tmp_path / "h.endn"),
                    log_path=str(tmp_path / "h.csv"))
    train(half_cfg, TINY, smooth_dir)
    resumed, hist = train(_cfg(tmp_path, max_steps=4, eval_every=2, checkpoint_path=str(tmp_path / "r.endn"),
                               log_path=str(tmp_path / "h.csv")), TINY, smooth_dir, resume=tmp_path / "h.endn")
    assert [h.step for h in hist] == [3, 4]
    for k in full.params:
        assert full.params[k].tobytes() == resumed.params[k].tobytes()
    with open(tmp_path / "h.csv") as fh:
        assert [r[0] for r in csv.reader(fh)][1:] == ["1", "2", "3", "4"]


def test_forward_float_precision_consistent(rng):
    cfg = ModelConfig(in_channels=1, base_width=4)
    p32 = init_params(cfg, 0)
    p64 = {k: v.astype(np.float64) for k, v in p32.items()}
    x = rng.uniform(0, 1, (1, 1, 16, 16))
    a = forward(x.astype(np.float32), p32, cfg).data
    b = forward(x, p64, cfg).data
    assert np.abs(a - b).max() < 1e-4
