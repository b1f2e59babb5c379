"""Raw numpy convolution kernels (no tape involvement).

"Same" zero padding, stride 1, odd square-or-rectangular kernels, integer
dilation. Each kernel offset is applied as one GEMM against a strided view
of the zero-padded input flattened to (channels, rows * padded_cols); the
few wrap-around columns this produces are cropped afterwards, which keeps
every GEMM operand a view instead of a gathered copy.
"""
from __future__ import annotations

import numpy as np


def _geometry(x_shape, w_shape, dilation):
    _, _, h, w = x_shape
    _, _, kh, kw = w_shape
    ph = dilation * (kh - 1) // 2
    pw = dilation * (kw - 1) // 2
    wp = w + 2 * pw
    return ph, pw, h + 2 * ph, wp, h * wp


def _pad_flat(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    n, c, h, w = x.shape
    # one spare row keeps the last offset's view inside the buffer
    xp = np.zeros((n, c, h + 2 * ph + 1, w + 2 * pw), dtype=x.dtype)
    xp[:, :, ph:ph + h, pw:pw + w] = x
    return xp


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, dilation: int = 1) -> np.ndarray:
    n, c, h, w = x.shape
    oc, _, kh, kw = weight.shape
    ph, pw, _, wp, span = _geometry(x.shape, weight.shape, dilation)
    xf = _pad_flat(x, ph, pw).reshape(n, c, -1)
    w_off = np.ascontiguousarray(weight.transpose(2, 3, 0, 1))
    out = np.empty((n, oc, h, w), dtype=x.dtype)
    for i in range(n):
        acc = np.zeros((oc, span), dtype=x.dtype)
        for dy in range(kh):
            for dx in range(kw):
                s = dilation * (dy * wp + dx)
                acc += w_off[dy, dx] @ xf[i, :, s:s + span]
        out[i] = acc.reshape(oc, h, wp)[:, :, :w]
    out += bias.reshape(1, oc, 1, 1)
    return out


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray, dilation: int = 1):
    """Return (grad_input, grad_weight, grad_bias) for :func:`conv2d_forward`."""
    n, c, h, w = x.shape
    oc, _, kh, kw = weight.shape
    ph, pw, _, wp, span = _geometry(x.shape, weight.shape, dilation)
    xp = _pad_flat(x, ph, pw)
    xf = xp.reshape(n, c, -1)
    gxp = np.zeros_like(xp)
    gxf = gxp.reshape(n, c, -1)
    w_t = np.ascontiguousarray(weight.transpose(2, 3, 1, 0))
    gw = np.zeros((kh, kw, oc, c), dtype=x.dtype)
    gpad = np.zeros((oc, h, wp), dtype=x.dtype)
    for i in range(n):
        gpad[:, :, :w] = grad_out[i]
        g = gpad.reshape(oc, span)
        for dy in range(kh):
            for dx in range(kw):
                s = dilation * (dy * wp + dx)
                gw[dy, dx] += g @ xf[i, :, s:s + span].T
                gxf[i, :, s:s + span] += w_t[dy, dx] @ g
    grad_input = np.ascontiguousarray(gxp[:, :, ph:ph + h, pw:pw + w])
    grad_weight = np.ascontiguousarray(gw.transpose(2, 3, 0, 1))
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    return grad_input, grad_weight, grad_bias

