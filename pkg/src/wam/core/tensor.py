"""Array-backed tensors with a closure tape for reverse-mode gradients."""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

_DTYPE: type = np.float32
_STATE = threading.local()  # gradient recording is a per-thread switch


class ConfigurationError(ValueError):
    """Raised when shapes or hyperparameters cannot be wired together."""


def default_dtype() -> type:
    return _DTYPE


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Switch the default floating type, e.g. ``precision(np.float64)`` for gradient checks."""
    global _DTYPE
    previous = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    previous = grad_enabled()
    _STATE.enabled = False
    try:
        yield
    finally:
        _STATE.enabled = previous


def grad_enabled() -> bool:
    return getattr(_STATE, "enabled", True)


class Tensor:
    """A dense array plus the bookkeeping needed to backpropagate through it.

    Layout is ``(batch, height, width, channels)`` for images; ops that do not
    care about layout accept any rank.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ConfigurationError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        self.accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # intermediate gradients are not needed after propagation
                if not isinstance(node, Param):
                    node.grad = None


class Param(Tensor):
    """A trainable tensor carrying its Adam moments."""

    __slots__ = ("m", "v", "step_count")

    def __init__(self, value, name: str | None = None):
        arr = np.array(value)
        if arr.dtype.kind != "f":
            arr = arr.astype(_DTYPE)
        super().__init__(arr, requires_grad=True, name=name)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step_count = 0

    def zero_grad(self) -> None:
        self.grad = None


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def make_result(data: np.ndarray, parents: Sequence[Tensor],
                backward: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op output, attaching the backward closure only when something upstream needs it."""
    track = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DTYPE))
