"""Reconstruction losses (l1, SSIM, their sum) and the PSNR metric."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ConfigError, ShapeError
from .ops import add
from .tensor import Tensor, as_tensor, record


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"SSIM window size must be odd, got {self.window}")
        if self.sigma <= 0 or self.dynamic_range <= 0:
            raise ConfigError("SSIM sigma and dynamic range must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    def kernel(self) -> np.ndarray:
        return _gaussian_1d(self.window, self.sigma)


DEFAULT_SSIM = SsimConfig()


@lru_cache(maxsize=16)
def _gaussian_1d(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    k = np.exp(-(r * r) / (2 * sigma * sigma))
    k /= k.sum()
    k.flags.writeable = False
    return k


def _blur(z: np.ndarray, k: np.ndarray) -> np.ndarray:
    z = correlate1d(z, k, axis=-1, mode="constant", cval=0.0)
    return correlate1d(z, k, axis=-2, mode="constant", cval=0.0)


@lru_cache(maxsize=64)
def _window_mass(h: int, w: int, size: int, sigma: float) -> np.ndarray:
    m = _blur(np.ones((h, w)), _gaussian_1d(size, sigma))
    m.flags.writeable = False
    return m


class _Windows:
    """Gaussian local averages whose weights are renormalized at the borders.

    The averaging operator is linear; its adjoint is ``blur(z / mass)``
    because the zero-padded correlation with a symmetric kernel is
    self-adjoint.
    """

    def __init__(self, shape, cfg: SsimConfig):
        self.k = cfg.kernel()
        self.mass = _window_mass(shape[-2], shape[-1], cfg.window, cfg.sigma)

    def mean(self, z):
        return _blur(z, self.k) / self.mass

    def adjoint(self, z):
        return _blur(z / self.mass, self.k)


def _check_pair(x, y):
    if x.shape != y.shape:
        raise ShapeError(f"image dims differ: {x.shape} vs {y.shape}")
    if x.ndim != 4:
        raise ShapeError(f"expected (n, c, h, w) images, got {x.shape}")


def _ssim_terms(a: np.ndarray, b: np.ndarray, cfg: SsimConfig):
    win = _Windows(a.shape, cfg)
    mu_a, mu_b = win.mean(a), win.mean(b)
    var_a = win.mean(a * a) - mu_a * mu_a
    var_b = win.mean(b * b) - mu_b * mu_b
    cov = win.mean(a * b) - mu_a * mu_b
    a1 = 2 * mu_a * mu_b + cfg.c1
    a2 = 2 * cov + cfg.c2
    b1 = mu_a * mu_a + mu_b * mu_b + cfg.c1
    b2 = var_a + var_b + cfg.c2
    s = (a1 * a2) / (b1 * b2)
    return win, s, mu_a, mu_b, a1, a2, b1, b2


def ssim_map(x, y, cfg: SsimConfig = DEFAULT_SSIM) -> np.ndarray:
    """Per-pixel, per-channel SSIM of two (n, c, h, w) images."""
    xd = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    yd = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    _check_pair(xd, yd)
    return _ssim_terms(xd, yd, cfg)[1]


def ssim(x, y, cfg: SsimConfig = DEFAULT_SSIM) -> float:
    return float(ssim_map(x, y, cfg).mean())


def _ssim_grad(win, s, mu_fixed, mu_var, a1, a2, b1, b2, fixed, var, upstream):
    """d(sum(upstream * S)) / d(var) for the image ``var`` paired with ``fixed``."""
    d_mu = upstream * s * (2 * mu_fixed / a1 - 2 * mu_fixed / a2 - 2 * mu_var / b1 + 2 * mu_var / b2)
    d_sq = upstream * s * (-1.0 / b2)
    d_cross = upstream * s * (2.0 / a2)
    return win.adjoint(d_mu) + 2 * var * win.adjoint(d_sq) + fixed * win.adjoint(d_cross)


def ssim_loss(pred: Tensor, target: Tensor, cfg: SsimConfig = DEFAULT_SSIM) -> Tensor:
    """mean(1 - SSIM(target, pred)); SSIM is averaged over channels and pixels."""
    pred, target = as_tensor(pred), as_tensor(target)
    _check_pair(pred, target)
    p = pred.data.astype(np.float64)
    t = target.data.astype(np.float64)
    win, s, mu_t, mu_p, a1, a2, b1, b2 = _ssim_terms(t, p, cfg)
    n = s.size
    value = np.full((1, 1, 1, 1), 1.0 - s.mean(), dtype=pred.dtype)

    def backward(g):
        up = np.full(s.shape, -g.reshape(-1)[0] / n)
        gp = _ssim_grad(win, s, mu_t, mu_p, a1, a2, b1, b2, t, p, up)
        gt = _ssim_grad(win, s, mu_p, mu_t, a1, a2, b1, b2, p, t, up)
        return gp.astype(pred.dtype), gt.astype(target.dtype)

    return record("ssim_loss", (pred, target), value, backward)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """mean |target - pred|; the subgradient at exact ties is 0."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss dims differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    value = np.full((1, 1, 1, 1), np.abs(diff, dtype=np.float64).mean(), dtype=pred.dtype)

    def backward(g):
        gp = np.sign(diff) * (g.reshape(-1)[0] / n)
        return gp.astype(pred.dtype), (-gp).astype(target.dtype)

    return record("l1_loss", (pred, target), value, backward)


def total_loss(pred: Tensor, target: Tensor, cfg: SsimConfig = DEFAULT_SSIM) -> Tensor:
    return add(l1_loss(pred, target), ssim_loss(pred, target, cfg))


def psnr(x, y, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical."""
    if max_val <= 0:
        raise ConfigError(f"max_val must be positive, got {max_val}")
    xd = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    yd = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if xd.shape != yd.shape:
        raise ShapeError(f"psnr dims differ: {xd.shape} vs {yd.shape}")
    mse = np.mean((xd - yd) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(max_val * max_val / mse))
