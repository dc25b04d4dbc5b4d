"""Named parameter tensors with gradient slots, and the finite-difference checker."""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from .tensor import Tensor, gradients, no_grad


class ParamStore:
    """Ordered mapping of parameter name to leaf tensor.

    Iteration order is insertion order and is part of the checkpoint
    contract.  ``grads`` holds the most recent gradients written by
    :func:`backward`.
    """

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        tensor = Tensor(np.array(value), requires_grad=True, name=name)
        self._params[name] = tensor
        self.grads[name] = np.zeros_like(tensor.data)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    @property
    def size(self) -> int:
        return sum(t.data.size for t in self._params.values())

    @property
    def dtype(self) -> np.dtype:
        first = next(iter(self._params.values()), None)
        return first.data.dtype if first is not None else np.dtype(np.float64)

    def zero_grad(self) -> None:
        for name, t in self._params.items():
            self.grads[name] = np.zeros_like(t.data)

    def copy(self, dtype=None) -> ParamStore:
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.data.astype(dtype or t.data.dtype, copy=True))
        return out

    def values(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            v = values[name]
            if v.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name}: {v.shape} vs {t.data.shape}")
            t.data = np.array(v, dtype=t.data.dtype)


def backward(loss: Tensor, store: ParamStore) -> dict[str, np.ndarray]:
    """Gradient of scalar ``loss`` for every parameter of ``store``.

    Parameters that ``loss`` does not depend on receive zeros.  The result is
    also written to ``store.grads``.
    """
    found = gradients(loss)
    by_id = {id(t): name for name, t in store.items()}
    grads = {name: np.zeros_like(t.data) for name, t in store.items()}
    for key, (_, g) in found.items():
        name = by_id.get(key)
        if name is not None:
            grads[name] = g
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
    store.grads = grads
    return grads


def grad_check(
    fn: Callable[[ParamStore], Tensor],
    store: ParamStore,
    epsilon: float = 1e-5,
    *,
    samples: int = 200,
    seed: int = 0,
    analytic: dict[str, np.ndarray] | None = None,
    method: str = "central",
) -> float:
    """Max relative error between analytic and finite-difference gradients.

    When the store has more than ``samples`` coordinates a seeded random
    subset of ``samples`` coordinates is checked, otherwise all of them.
    Relative error is ``|a - n| / max(1e-8, |a| + |n|)``.

    ``method`` selects the numeric estimate: ``"central"`` is the two-point
    difference at ``epsilon``, ``"five-point"`` the fourth-order stencil, and
    ``"ridders"`` polynomial extrapolation over step sizes shrinking from
    ``epsilon``, keeping the estimate with the smallest internal error.
    Ridders suits piecewise-smooth losses where coordinates with tiny
    gradients need a large step and coordinates near a ReLU kink a small one.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if method not in ("central", "five-point", "ridders"):
        raise ValueError("method must be 'central', 'five-point' or 'ridders'")
    if analytic is None:
        analytic = backward(fn(store), store)
    coords = [(name, k) for name, t in store.items() for k in range(t.data.size)]
    if len(coords) > samples:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(coords), size=samples, replace=False)
        coords = [coords[i] for i in sorted(chosen)]

    def value() -> float:
        with no_grad():
            v = float(fn(store).data)
        if not np.isfinite(v):
            raise FloatingPointError("non-finite function value during grad_check")
        return v

    worst = 0.0
    for name, k in coords:
        flat = store[name].data.reshape(-1)
        original = flat[k]

        def at(offset: float) -> float:
            flat[k] = original + offset
            return value()

        def central(h: float) -> float:
            return (at(h) - at(-h)) / (2.0 * h)

        try:
            if method == "central":
                numeric = central(epsilon)
            elif method == "five-point":
                # differences first, so a locally constant function gives exactly zero
                near = at(epsilon) - at(-epsilon)
                far = at(2 * epsilon) - at(-2 * epsilon)
                numeric = (8.0 * near - far) / (12.0 * epsilon)
            else:
                numeric = _ridders(central, epsilon)
        finally:
            flat[k] = original
        a = float(analytic[name].reshape(-1)[k])
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    return worst


def _ridders(central: Callable[[float], float], h: float, shrink: float = 1.4, steps: int = 10) -> float:
    """Ridders' extrapolation of central differences toward step zero."""
    table = [[central(h)]]
    best, best_err = table[0][0], np.inf
    for i in range(1, steps):
        h /= shrink
        row = [central(h)]
        fac = shrink * shrink
        for j in range(1, i + 1):
            row.append((row[j - 1] * fac - table[i - 1][j - 1]) / (fac - 1.0))
            fac *= shrink * shrink
            err = max(abs(row[j] - row[j - 1]), abs(row[j] - table[i - 1][j - 1]))
            if err <= best_err:
                best, best_err = row[j], err
        table.append(row)
        if abs(row[i] - table[i - 1][i - 1]) >= 2.0 * best_err:
            break
    return best
