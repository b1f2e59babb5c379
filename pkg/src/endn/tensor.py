"""Dense tensors and the recording tape used for reverse-mode gradients.

Tensors are immutable wrappers around numpy arrays laid out (n, c, h, w).
Operations executed while a :class:`Tape` is active record a node holding
the closure that maps the output gradient to input gradients; calling
:meth:`Tape.backward` replays those closures in reverse recording order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "_tape")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self._tape: Tape | None = None

    @classmethod
    def zeros(cls, shape, dtype=np.float32) -> "Tensor":
        return cls(np.zeros(shape, dtype=dtype))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other: "Tensor") -> "Tensor":
        from .ops import add
        return add(self, other)

    def __mul__(self, scalar: float) -> "Tensor":
        from .ops import scale
        return scale(self, scalar)

    __rmul__ = __mul__


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def check_tensor4(t: Tensor, name: str = "input") -> None:
    if t.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (n, c, h, w), got shape {t.shape}")
    if min(t.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {t.shape}")


@dataclass
class Node:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Records differentiable operations on watched tensors.

    Use as a context manager; only operations run inside the ``with`` block
    and touching a watched tensor (directly or transitively) are recorded.
    A tape is single-owner and may be differentiated more than once.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def watch(self, x) -> Tensor:
        """Register ``x`` as a leaf. Returns a fresh tracked tensor sharing its data."""
        t = Tensor(x.data if isinstance(x, Tensor) else np.asarray(x))
        t._tape = self
        self.leaves.append(t)
        return t

    def watch_all(self, params: Mapping[str, object]) -> dict[str, Tensor]:
        return {k: self.watch(v) for k, v in params.items()}

    def tracks(self, t: Tensor) -> bool:
        return t._tape is self

    def backward(self, loss: Tensor) -> list[np.ndarray]:
        """Gradients of the scalar ``loss`` for every leaf, in watch order.

        Leaves the loss does not depend on receive zeros.
        """
        if loss.shape != (1, 1, 1, 1):
            raise ContractError(f"loss must have dims (1, 1, 1, 1), got {loss.shape}")
        grads: dict[int, np.ndarray] = {}
        if self.tracks(loss):
            grads[id(loss)] = np.ones(loss.shape, dtype=loss.dtype)
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not self.tracks(inp):
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [
            np.asarray(grads[id(leaf)], dtype=leaf.dtype) if id(leaf) in grads else np.zeros_like(leaf.data)
            for leaf in self.leaves
        ]

    def gradient(self, loss: Tensor, sources):
        """Like :meth:`backward` but shaped after ``sources`` (a tensor, list or dict)."""
        all_grads = self.backward(loss)
        by_id = {id(leaf): g for leaf, g in zip(self.leaves, all_grads)}

        def pick(t: Tensor) -> np.ndarray:
            if id(t) not in by_id:
                raise ContractError("gradient requested for a tensor that was not watched on this tape")
            return by_id[id(t)]

        if isinstance(sources, Tensor):
            return pick(sources)
        if isinstance(sources, Mapping):
            return {k: pick(v) for k, v in sources.items()}
        return [pick(t) for t in sources]


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def record(kind: str, inputs: Iterable[Tensor], output: np.ndarray, backward: BackwardFn) -> Tensor:
    """Wrap ``output`` and, if any input is tracked by the active tape, record the node."""
    out = Tensor(output)
    tape = active_tape()
    if tape is not None:
        inputs = tuple(inputs)
        if any(tape.tracks(t) for t in inputs):
            out._tape = tape
            tape.nodes.append(Node(kind, inputs, out, backward))
    return out
