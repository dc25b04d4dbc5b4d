"""Dense tensors with a recorded computation graph and reverse-mode gradients."""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


_mode = threading.local()


def grad_enabled() -> bool:
    return getattr(_mode, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording the computation (thread-local)."""
    previous = grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = previous


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A numpy array plus the information needed to differentiate through it.

    Leaves created with ``requires_grad=True`` are parameters.  Every op
    result records its parents and a closure mapping the output gradient to
    one gradient per parent.
    """

    __slots__ = ("data", "parents", "backward_fn", "requires_grad", "name")

    def __init__(
        self,
        data: np.ndarray,
        parents: tuple[Tensor, ...] = (),
        backward_fn: BackwardFn | None = None,
        requires_grad: bool = False,
        name: str | None = None,
    ):
        self.data = data
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the op implementations live in ops.py
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)


def constant(data, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def make_result(data: np.ndarray, parents: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    """Wrap an op output, recording parents only when a gradient can flow."""
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, parents, fn, True)
    return Tensor(data)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def gradients(loss: Tensor) -> dict[int, tuple[Tensor, np.ndarray]]:
    """Reverse sweep from a scalar ``loss``; returns {id(leaf): (leaf, grad)}."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
    if not loss.requires_grad:
        return leaves
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            if id(node) in leaves:
                leaves[id(node)] = (node, leaves[id(node)][1] + g)
            else:
                leaves[id(node)] = (node, g)
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
    return leaves
