"""Differentiable operations on :class:`~endn.tensor.Tensor`.

Every function here computes its result eagerly and, when a tape is
recording, registers a backward closure over exactly the arrays it needs.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor, check_tensor4, record

SOFTPLUS_LINEAR_ABOVE = 20.0


# ----------------------------------------------------------------- convolution

def conv2d(x: Tensor, weight: Tensor, bias: Tensor, dilation: int = 1) -> Tensor:
    """Stride-1 convolution with "same" zero padding of ``dilation * (k - 1) / 2``."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    check_tensor4(x)
    if weight.ndim != 4:
        raise ShapeError(f"weight must be (outC, inC, kh, kw), got {weight.shape}")
    oc, ic, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"kernel size must be odd, got {kh}x{kw}")
    if int(dilation) != dilation or dilation < 1:
        raise ConfigError(f"dilation must be a positive integer, got {dilation}")
    if x.shape[1] != ic:
        raise ShapeError(f"input has {x.shape[1]} channels but weight expects {ic}")
    if bias.shape != (oc,):
        raise ShapeError(f"bias must have shape ({oc},), got {bias.shape}")
    dilation = int(dilation)
    xd, wd = x.data, weight.data.astype(x.dtype, copy=False)
    out = kernels.conv2d_forward(xd, wd, bias.data.astype(x.dtype, copy=False), dilation)

    def backward(g):
        gx, gw, gb = kernels.conv2d_backward(g, xd, wd, dilation)
        return gx, gw, gb

    return record("conv2d", (x, weight, bias), out, backward)


def conv2d_backward(grad_out, saved: dict) -> dict:
    """Functional form of the convolution gradient.

    ``saved`` holds the forward ``input``, ``weight`` and ``dilation``.
    """
    x = np.asarray(saved["input"])
    w = np.asarray(saved["weight"])
    d = int(saved.get("dilation", 1))
    g = np.asarray(grad_out)
    expected = (x.shape[0], w.shape[0], x.shape[2], x.shape[3])
    if g.shape != expected:
        raise ShapeError(f"grad_out has dims {g.shape}, forward output was {expected}")
    gx, gw, gb = kernels.conv2d_backward(g, x, w, d)
    return {"grad_input": gx, "grad_weight": gw, "grad_bias": gb}


# ------------------------------------------------------------------ structural

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add needs identical dims, got {a.shape} and {b.shape}")
    return record("add", (a, b), a.data + b.data, lambda g: (g, g))


def add_n(*xs: Tensor) -> Tensor:
    if not xs:
        raise ShapeError("add_n needs at least one operand")
    xs = tuple(as_tensor(x) for x in xs)
    for x in xs[1:]:
        if x.shape != xs[0].shape:
            raise ShapeError(f"add_n needs identical dims, got {xs[0].shape} and {x.shape}")
    out = xs[0].data.copy()
    for x in xs[1:]:
        out += x.data
    return record("add_n", xs, out, lambda g: (g,) * len(xs))


def scale(x: Tensor, s: float) -> Tensor:
    x = as_tensor(x)
    s = float(s)
    return record("scale", (x,), x.data * x.dtype.type(s), lambda g: (g * s,))


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    inputs = tuple(as_tensor(t) for t in inputs)
    if not inputs:
        raise ShapeError("concat_channels needs at least one tensor")
    for t in inputs:
        check_tensor4(t)
    n, _, h, w = inputs[0].shape
    for t in inputs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ShapeError(f"concat_channels: {t.shape} does not match n,h,w of {inputs[0].shape}")
    out = np.concatenate([t.data for t in inputs], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in inputs])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(inputs)))

    return record("concat", inputs, out, backward)


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.full((1, 1, 1, 1), x.data.sum(), dtype=x.dtype)
    return record("sum", (x,), out, lambda g: (np.full(x.shape, g.reshape(-1)[0], dtype=x.dtype),))


def mean_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    out = np.full((1, 1, 1, 1), x.data.mean(), dtype=x.dtype)
    return record("mean", (x,), out, lambda g: (np.full(x.shape, g.reshape(-1)[0] / n, dtype=x.dtype),))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equally-shaped tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul needs identical dims, got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return record("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


# ----------------------------------------------------------------- activations

def _softplus(x: np.ndarray) -> np.ndarray:
    big = x > SOFTPLUS_LINEAR_ABOVE
    return np.where(big, x, np.log1p(np.exp(np.where(big, 0.0, x)))).astype(x.dtype, copy=False)


def _softplus_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > SOFTPLUS_LINEAR_ABOVE, 1.0, expit(x)).astype(x.dtype, copy=False)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record("relu", (x,), np.where(mask, x.data, 0).astype(x.dtype), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return record("sigmoid", (x,), s, lambda g: (g * s * (1 - s),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return record("tanh", (x,), t, lambda g: (g * (1 - t * t),))


def softplus(x: Tensor) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return record("softplus", (x,), _softplus(xd), lambda g: (g * _softplus_grad(xd),))


def swish(x: Tensor) -> Tensor:
    """x * sigmoid(x) (beta fixed at 1)."""
    x = as_tensor(x)
    xd = x.data
    s = expit(xd)

    def backward(g):
        return (g * (s + xd * s * (1 - s)),)

    return record("swish", (x,), xd * s, backward)


def mish(x: Tensor) -> Tensor:
    """x * tanh(softplus(x))."""
    x = as_tensor(x)
    xd = x.data
    t = np.tanh(_softplus(xd))

    def backward(g):
        return (g * (t + xd * (1 - t * t) * _softplus_grad(xd)),)

    return record("mish", (x,), xd * t, backward)


ACTIVATIONS = {
    "relu": relu,
    "swish": swish,
    "mish": mish,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softplus": softplus,
}


def elementwise(op: str, *inputs, scalar: float | None = None) -> Tensor:
    """Dispatch by name: ``add``, ``mul-by-scalar`` or any key of ``ACTIVATIONS``."""
    if op == "add":
        return add(*inputs)
    if op in ("mul-by-scalar", "scale"):
        if scalar is None:
            raise ConfigError("mul-by-scalar needs scalar=")
        return scale(inputs[0], scalar)
    try:
        fn = ACTIVATIONS[op]
    except KeyError:
        raise ConfigError(f"unknown elementwise op {op!r}") from None
    return fn(*inputs)
