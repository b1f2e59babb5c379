"""The ensemble denoiser: an initial feature block, four parallel refinement
modules whose outputs are concatenated, and a dilated fusion convolution.

Parameters live in a flat ordered mapping ``"<layer path>.weight"`` /
``"<layer path>.bias"`` -> array. Every function taking ``params`` accepts
either numpy arrays or tape-tracked tensors as values.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError, ShapeError
from .ops import add, add_n, concat_channels, conv2d, mish, relu, swish
from .optim import he_init
from .tensor import Tensor, as_tensor, check_tensor4

ENSEMBLE_BRANCHES = (("relu", relu), ("swish", swish), ("mish", mish))


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    base_width: int = 64
    rfa_kernels: tuple[int, ...] = (1, 3, 5)
    mca_deep_kernels: tuple[int, ...] = (3, 5, 7, 5, 3)
    drf_blocks: int = 3
    fusion_dilation: int = 2
    global_residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, "rfa_kernels", tuple(int(k) for k in self.rfa_kernels))
        object.__setattr__(self, "mca_deep_kernels", tuple(int(k) for k in self.mca_deep_kernels))
        if self.in_channels not in (1, 3):
            raise ConfigError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.base_width < 4:
            raise ConfigError(f"base_width must be at least 4, got {self.base_width}")
        for k in self.rfa_kernels + self.mca_deep_kernels:
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"kernel sizes must be odd and positive, got {k}")
        if not self.rfa_kernels or not self.mca_deep_kernels:
            raise ConfigError("rfa_kernels and mca_deep_kernels must be non-empty")
        if self.drf_blocks < 1:
            raise ConfigError(f"drf_blocks must be at least 1, got {self.drf_blocks}")
        if self.fusion_dilation < 1:
            raise ConfigError(f"fusion_dilation must be at least 1, got {self.fusion_dilation}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["rfa_kernels"] = list(self.rfa_kernels)
        d["mca_deep_kernels"] = list(self.mca_deep_kernels)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def conv_layers(cfg: ModelConfig) -> dict[str, tuple[int, int, int]]:
    """Ordered ``layer path -> (out_channels, in_channels, kernel)`` for every conv."""
    w, c = cfg.base_width, cfg.in_channels
    layers: dict[str, tuple[int, int, int]] = {
        "init.conv5": (w, c, 5),
        "init.conv3": (w, w, 3),
        "init.conv1": (w, w, 1),
    }
    for k in cfg.rfa_kernels:
        layers[f"rfa.rb{k}.conv1"] = (w, w, k)
        layers[f"rfa.rb{k}.conv2"] = (w, w, k)
    layers["rfa.fuse"] = (w, w, 3)
    layers.update(_ensemble_layers("mafe", w))
    layers["mca.shallow"] = (w, w, 3)
    for j, k in enumerate(cfg.mca_deep_kernels):
        layers[f"mca.deep{j}"] = (w, w, k)
    layers.update(_ensemble_layers("mca.ens_shallow", w))
    layers.update(_ensemble_layers("mca.ens_deep", w))
    layers["mca.fuse"] = (w, 2 * w, 3)
    for j in range(cfg.drf_blocks):
        layers[f"drf.rb{j}.conv1"] = (w, w, 3)
        layers[f"drf.rb{j}.conv2"] = (w, w, 3)
    layers["drf.fuse"] = (w, cfg.drf_blocks * w, 1)
    layers["tail"] = (c, 4 * w, 3)
    return layers


def _ensemble_layers(prefix: str, w: int) -> dict[str, tuple[int, int, int]]:
    out = {f"{prefix}.{name}": (w, w, 3) for name, _ in ENSEMBLE_BRANCHES}
    out[f"{prefix}.fuse"] = (w, len(ENSEMBLE_BRANCHES) * w, 3)
    return out


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for name, (o, i, k) in conv_layers(cfg).items():
        shapes[f"{name}.weight"] = (o, i, k, k)
        shapes[f"{name}.bias"] = (o,)
    return shapes


def count_params(cfg: ModelConfig) -> int:
    return sum(o * i * k * k + o for o, i, k in conv_layers(cfg).values())


def init_params(cfg: ModelConfig, seed=0, dtype=np.float32) -> dict[str, np.ndarray]:
    """He-normal weights (fan_in = in_channels * k * k) and zero biases."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, (o, i, k) in conv_layers(cfg).items():
        params[f"{name}.weight"] = he_init((o, i, k, k), i * k * k, rng, dtype)
        params[f"{name}.bias"] = np.zeros(o, dtype=dtype)
    return params


def zero_params(cfg: ModelConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape, dtype=dtype) for name, shape in param_shapes(cfg).items()}


def validate_params(params: Mapping[str, object], cfg: ModelConfig) -> None:
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        diff = sorted(set(params) ^ set(expected))
        raise ConfigError(f"parameter names do not match the config: {diff[:5]}")
    for name, shape in expected.items():
        got = tuple(np.shape(params[name].data if isinstance(params[name], Tensor) else params[name]))
        if got != shape:
            raise ConfigError(f"{name} has dims {got}, config implies {shape}")


# ---------------------------------------------------------------------- blocks

def _conv(x: Tensor, params, name: str, dilation: int = 1) -> Tensor:
    return conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], dilation)


def initial_block(x: Tensor, params) -> Tensor:
    """conv5x5 -> relu -> conv3x3 -> relu -> conv1x1 -> relu."""
    y = relu(_conv(x, params, "init.conv5"))
    y = relu(_conv(y, params, "init.conv3"))
    return relu(_conv(y, params, "init.conv1"))


def residual_block(x: Tensor, params, prefix: str) -> Tensor:
    """x + conv(relu(conv(x))), kernel size taken from the stored weights."""
    y = _conv(relu(_conv(x, params, f"{prefix}.conv1")), params, f"{prefix}.conv2")
    return add(x, y)


def activation_ensemble(x: Tensor, params, prefix: str) -> Tensor:
    """relu / swish / mish branches, each convolved, concatenated and fused."""
    branches = [_conv(act(x), params, f"{prefix}.{name}") for name, act in ENSEMBLE_BRANCHES]
    return _conv(concat_channels(branches), params, f"{prefix}.fuse")


def rfa_module(e: Tensor, params, cfg: ModelConfig) -> Tensor:
    """Residual feature aggregation: parallel residual blocks of several kernel sizes, summed."""
    outs = [residual_block(e, params, f"rfa.rb{k}") for k in cfg.rfa_kernels]
    return _conv(add_n(*outs), params, "rfa.fuse")


def mafe_module(e: Tensor, params, cfg: ModelConfig) -> Tensor:
    return activation_ensemble(e, params, "mafe")


def mca_module(e: Tensor, params, cfg: ModelConfig) -> Tensor:
    """Shallow (one conv) and deep (relu-separated conv stack) paths, each
    followed by its own activation ensemble, concatenated and fused."""
    shallow = activation_ensemble(_conv(e, params, "mca.shallow"), params, "mca.ens_shallow")
    deep = e
    for j in range(len(cfg.mca_deep_kernels)):
        if j:
            deep = relu(deep)
        deep = _conv(deep, params, f"mca.deep{j}")
    deep = activation_ensemble(deep, params, "mca.ens_deep")
    return _conv(concat_channels([shallow, deep]), params, "mca.fuse")


def drf_module(e: Tensor, params, cfg: ModelConfig) -> Tensor:
    """Residual blocks in series; block j sees the sum of the input and all
    earlier block outputs. All block outputs are concatenated and fused 1x1."""
    outs: list[Tensor] = []
    for j in range(cfg.drf_blocks):
        inp = e if not outs else add_n(*reversed(outs), e)
        outs.append(residual_block(inp, params, f"drf.rb{j}"))
    return _conv(concat_channels(outs), params, "drf.fuse")


MODULES = {"rfa": rfa_module, "mafe": mafe_module, "mca": mca_module, "drf": drf_module}


def forward(x, params: Mapping[str, object], cfg: ModelConfig) -> Tensor:
    """Denoise a (n, in_channels, h, w) batch. Output dims equal input dims."""
    x = as_tensor(x)
    check_tensor4(x)
    if x.shape[1] != cfg.in_channels:
        raise ShapeError(f"model expects {cfg.in_channels} input channels, got {x.shape[1]}")
    e = initial_block(x, params)
    fused = concat_channels([module(e, params, cfg) for module in MODULES.values()])
    out = _conv(fused, params, "tail", cfg.fusion_dilation)
    return add(x, out) if cfg.global_residual else out


def receptive_radius(cfg: ModelConfig) -> int:
    """Pixels beyond which an input change cannot reach an output pixel.

    Full-image and patch inference agree exactly only farther than this
    from the patch border.
    """
    r = lambda k, d=1: d * (k - 1) // 2  # noqa: E731
    ens = r(3) + r(3)
    init = r(5) + r(3) + r(1)
    rfa = max(2 * r(k) for k in cfg.rfa_kernels) + r(3)
    deep = sum(r(k) for k in cfg.mca_deep_kernels)
    mca = max(r(3) + ens, deep + ens) + r(3)
    drf = cfg.drf_blocks * 2 * r(3)
    return init + max(rfa, ens, mca, drf) + r(3, cfg.fusion_dilation)
