"""Ensemble-of-modules CNN image denoiser in numpy with hand-written gradients."""
from .errors import (
    ConfigError,
    ContractError,
    CorruptCheckpointError,
    EndnError,
    EndnIOError,
    FormatError,
    NumericError,
    ShapeError,
)
from .losses import SsimConfig, l1_loss, psnr, ssim, ssim_loss, ssim_map, total_loss
from .model import ModelConfig, count_params, forward, init_params, zero_params
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "CorruptCheckpointError", "EndnError", "EndnIOError", "FormatError",
    "NumericError", "ShapeError", "SsimConfig", "l1_loss", "psnr", "ssim", "ssim_loss", "ssim_map",
    "total_loss", "ModelConfig", "count_params", "forward", "init_params", "zero_params", "Tape", "Tensor",
]
