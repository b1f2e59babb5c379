"""He-normal initialization and the Adam optimizer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError


def he_init(shape, fan_in: int, rng=None, dtype=np.float32) -> np.ndarray:
    """Sample N(0, 2 / fan_in). ``rng`` is a seed or a ``numpy.random.Generator``."""
    if fan_in <= 0:
        raise ConfigError(f"fan_in must be positive, got {fan_in}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def hyperparams(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t}


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One Adam update, applied in place to ``params`` and ``state``.

    Moments are created lazily as zeros on the first step. Returns
    ``(params, state)`` for convenience.
    """
    if set(grads) != set(params):
        missing = sorted(set(params) ^ set(grads))
        raise ShapeError(f"params and grads name different tensors: {missing[:5]}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has dims {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        if m.shape != p.shape:
            raise ShapeError(f"Adam moments for {name} have dims {m.shape}, parameter has {p.shape}")
        g = g.astype(p.dtype, copy=False)
        m *= p.dtype.type(b1)
        m += p.dtype.type(1.0 - b1) * g
        v *= p.dtype.type(b2)
        v += p.dtype.type(1.0 - b2) * (g * g)
        m_hat = m / p.dtype.type(corr1)
        v_hat = v / p.dtype.type(corr2)
        p -= p.dtype.type(state.lr) * m_hat / (np.sqrt(v_hat) + p.dtype.type(state.eps))
    return params, state
