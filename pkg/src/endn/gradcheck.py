"""Central finite-difference checks of the tape gradients (float64)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ops
from .losses import l1_loss, ssim_loss
from .model import MODULES, ModelConfig, forward, init_params, initial_block, residual_block
from .tensor import Tape, Tensor

STEP = 1e-5
ABS_FLOOR = 1e-12


def relative_error(analytic, numeric, floor: float = ABS_FLOOR) -> float:
    """||a - n|| / max(||a||, ||n||) over all checked coordinates."""
    a = np.asarray(analytic, np.float64).reshape(-1)
    n = np.asarray(numeric, np.float64).reshape(-1)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def coordinate_errors(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(analytic, np.float64).reshape(-1)
    n = np.asarray(numeric, np.float64).reshape(-1)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@dataclass
class CheckResult:
    name: str
    max_rel_error: float  # norm-wise; the pass/fail quantity
    worst_coordinate: float  # per-coordinate, dominated by rounding in the difference quotient
    checked: int


def check_function(name: str, fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], *,
                   samples: int | None = None, seed: int = 0, step: float = STEP) -> CheckResult:
    """Compare tape gradients of ``fn(*inputs) -> scalar`` with central differences.

    ``samples`` limits how many coordinates (drawn uniformly over all inputs)
    are perturbed; ``None`` checks every coordinate.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    with Tape() as tape:
        tracked = [tape.watch(x) for x in inputs]
        loss = fn(*tracked)
    grads = tape.gradient(loss, tracked)

    coords = [(i, j) for i, x in enumerate(inputs) for j in range(x.size)]
    if samples is not None and samples < len(coords):
        pick = np.random.default_rng(seed).choice(len(coords), size=samples, replace=False)
        coords = [coords[k] for k in sorted(pick)]
    analytic, numeric = [], []
    for i, j in coords:
        flat = inputs[i].reshape(-1)
        orig = flat[j]
        flat[j] = orig + step
        up = fn(*inputs).item()
        flat[j] = orig - step
        down = fn(*inputs).item()
        flat[j] = orig
        numeric.append((up - down) / (2 * step))
        analytic.append(grads[i].reshape(-1)[j])
    if not coords:
        return CheckResult(name, 0.0, 0.0, 0)
    worst = float(coordinate_errors(analytic, numeric).max())
    return CheckResult(name, relative_error(analytic, numeric), worst, len(coords))


def _random_biases(params: dict, rng) -> dict:
    # zero biases put whole channels exactly on the relu kink, where
    # central differences are meaningless
    for name in params:
        if name.endswith(".bias"):
            params[name] = rng.normal(0, 0.1, params[name].shape)
    return params


def _projection(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


def network_check(width: int = 8, size: int = 12, in_channels: int = 1, samples: int = 50,
                  seed: int = 0) -> CheckResult:
    """End-to-end check: random projection of the network output against
    ``samples`` randomly chosen parameters."""
    cfg = ModelConfig(in_channels=in_channels, base_width=width)
    rng = np.random.default_rng(seed + 1)
    params = _random_biases(init_params(cfg, seed, dtype=np.float64), rng)
    x = rng.uniform(0, 1, (1, in_channels, size, size))
    proj = _projection(x.shape, seed + 2)
    names = list(params)

    def loss(*arrays):
        p = dict(zip(names, arrays))
        return ops.sum_all(ops.mul(forward(x, p, cfg), proj))

    return check_function(f"network(width={width}, size={size})", loss, [params[k] for k in names],
                          samples=samples, seed=seed)


def op_suite(seed: int = 0) -> list[CheckResult]:
    """Per-op checks on small float64 problems; every coordinate is perturbed."""
    rng = np.random.default_rng(seed)
    out: list[CheckResult] = []

    def projected(fn, shape):
        proj = rng.standard_normal(shape)
        return lambda *a: ops.sum_all(ops.mul(fn(*a), proj))

    x = rng.standard_normal((2, 2, 6, 6))
    for k in (1, 3, 5, 7):
        for d in (1, 2) if k == 3 else (1,):
            w = rng.standard_normal((3, 2, k, k))
            b = rng.standard_normal(3)
            fn = projected(lambda x_, w_, b_, d=d: ops.conv2d(x_, w_, b_, d), (2, 3, 6, 6))
            out.append(check_function(f"conv2d k={k} dilation={d}", fn, [x, w, b]))

    # keep relu inputs away from the kink at 0
    xa = rng.uniform(0.1, 2.0, (1, 2, 4, 4)) * rng.choice([-1.0, 1.0], (1, 2, 4, 4))
    for act in ("relu", "swish", "mish", "sigmoid", "tanh", "softplus"):
        fn = projected(ops.ACTIVATIONS[act], xa.shape)
        out.append(check_function(act, fn, [xa]))
    xs = np.array([[[[25.0, -3.0]]]])
    out.append(check_function("softplus/mish large input", projected(lambda t: ops.mish(ops.softplus(t)), xs.shape), [xs]))

    a, b = rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 3, 3, 3))
    out.append(check_function("concat", projected(lambda p, q: ops.concat_channels([p, q]), (1, 5, 3, 3)), [a, b]))
    c = rng.standard_normal((1, 2, 3, 3))
    out.append(check_function("residual add", projected(lambda p, q: ops.add(p, q), a.shape), [a, c]))
    out.append(check_function("add_n/scale", projected(lambda p, q: ops.scale(ops.add_n(p, q, p), -1.5), a.shape), [a, c]))

    pred = rng.uniform(0, 1, (1, 2, 8, 8))
    target = pred + rng.uniform(0.05, 0.2, pred.shape) * rng.choice([-1.0, 1.0], pred.shape)
    out.append(check_function("l1_loss", l1_loss, [pred, target]))
    p2, t2 = rng.uniform(0, 1, (1, 2, 12, 12)), rng.uniform(0, 1, (1, 2, 12, 12))
    out.append(check_function("ssim_loss", ssim_loss, [p2, t2]))

    # blocks
    cfg = ModelConfig(in_channels=1, base_width=4)
    params = _random_biases(init_params(cfg, seed, dtype=np.float64), rng)
    xi = rng.uniform(0, 1, (1, 1, 8, 8))
    e = rng.standard_normal((1, 4, 8, 8))

    def block_check(name, fn, x_in, keys, shape):
        proj = rng.standard_normal(shape)

        def loss(x_, *arrays):
            p = dict(params)
            p.update(zip(keys, arrays))
            return ops.sum_all(ops.mul(fn(x_, p), proj))

        out.append(check_function(name, loss, [x_in] + [params[k] for k in keys]))

    init_keys = [k for k in params if k.startswith("init.")]
    block_check("initial_block", initial_block, xi, init_keys, (1, 4, 8, 8))
    rb_keys = [k for k in params if k.startswith("rfa.rb3.")]
    block_check("residual_block", lambda x_, p: residual_block(x_, p, "rfa.rb3"), e, rb_keys, e.shape)
    for mod_name, mod in MODULES.items():
        keys = [k for k in params if k.startswith(mod_name + ".")]
        block_check(f"{mod_name}_module", lambda x_, p, mod=mod: mod(x_, p, cfg), e, keys, e.shape)
    return out
