"""Differentiable forward operations used by the graph model.

Every function accepts :class:`Tensor` operands and returns a new Tensor
whose backward closure maps the output gradient to the operand gradients.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor, make_result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- arithmetic ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return make_result(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return make_result(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "mul")
    sa, sb = a.shape, b.shape
    da, db = a.data, b.data
    return make_result(
        da * db, (a, b), lambda g: (_unbroadcast(g * db, sa), _unbroadcast(g * da, sb))
    )


def scale(a: Tensor, c: float) -> Tensor:
    return make_result(a.data * c, (a,), lambda g: (g * c,))


def add_n(items: Sequence[Tensor]) -> Tensor:
    """Sum of equally shaped tensors."""
    if not items:
        raise ValueError("add_n of an empty sequence")
    shape = items[0].shape
    for t in items:
        if t.shape != shape:
            raise ShapeError(f"add_n: incompatible shapes {shape} and {t.shape}")
    data = items[0].data.copy()
    for t in items[1:]:
        data = data + t.data
    return make_result(data, tuple(items), lambda g: (g,) * len(items))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    da, db = a.data, b.data
    return make_result(da @ db, (a, b), lambda g: (g @ db.T, da.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for row-batched ``x``."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    dx, dw = x.data, w.data
    out = dx @ dw
    if b is None:
        return make_result(out, (x, w), lambda g: (g @ dw.T, dx.T @ g))
    if b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias shape {b.shape} does not match {w.shape}")
    return make_result(out + b.data, (x, w, b), lambda g: (g @ dw.T, dx.T @ g, g.sum(axis=0)))


def transpose(a: Tensor) -> Tensor:
    return make_result(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(items: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenation (``‖``) along ``axis``."""
    try:
        data = np.concatenate([t.data for t in items], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[t.shape for t in items]} on axis {axis}"
        ) from None
    bounds = np.cumsum([t.shape[axis] for t in items])[:-1]
    return make_result(data, tuple(items), lambda g: tuple(np.split(g, bounds, axis=axis)))


# -- elementwise nonlinearities -------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return make_result(s, (a,), lambda g: (g * s * (1.0 - s),))


def log_sigmoid(a: Tensor) -> Tensor:
    out = -np.logaddexp(0.0, -a.data)
    return make_result(out, (a,), lambda g: (g * _sigmoid(-a.data),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return make_result(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return make_result(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    d = a.data
    return make_result(np.log(d), (a,), lambda g: (g / d,))


# -- reductions and normalizers -------------------------------------------------


def total(a: Tensor, axis: int | None = None) -> Tensor:
    shape = a.shape
    if axis is None:
        return make_result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = a.data.sum(axis=axis)
    return make_result(
        out, (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)
    )


def mean(a: Tensor, axis: int = 0) -> Tensor:
    n = a.shape[axis]
    if n == 0:
        raise ShapeError("mean over an empty axis")
    shape = a.shape
    out = a.data.mean(axis=axis)
    return make_result(
        out, (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape) / n,)
    )


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return make_result(s, (a,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def log_softmax(a: Tensor) -> Tensor:
    """Log-softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return make_result(out, (a,), lambda g: (g - s * g.sum(axis=-1, keepdims=True),))


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    ssum = e.sum(axis=axis, keepdims=True)
    out = (np.log(ssum) + m).squeeze(axis)
    w = e / ssum
    return make_result(out, (a,), lambda g: (np.expand_dims(g, axis) * w,))


# -- indexing -------------------------------------------------------------------


def take(a: Tensor, index) -> Tensor:
    """Rows ``a[index]``; repeated indices accumulate in the backward pass."""
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return make_result(a.data[index], (a,), backward)


def diff_rows(a: Tensor, i, j) -> Tensor:
    """``a[i] - a[j]`` row-wise (pairwise node-state differences)."""
    i = np.asarray(i, dtype=np.intp)
    j = np.asarray(j, dtype=np.intp)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, i, g)
        np.add.at(out, j, -g)
        return (out,)

    return make_result(a.data[i] - a.data[j], (a,), backward)


def pick(a: Tensor, rows, cols) -> Tensor:
    """Elements ``a[rows[k], cols[k]]`` as a vector."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return make_result(a.data[rows, cols], (a,), backward)


def segment_sum(a: Tensor, index, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets given by ``index``."""
    index = np.asarray(index, dtype=np.intp)
    if len(index) != a.shape[0]:
        raise ShapeError(f"segment_sum: {len(index)} indices for rows of shape {a.shape}")
    out = np.zeros((num_segments,) + a.shape[1:], dtype=a.data.dtype)
    np.add.at(out, index, a.data)
    return make_result(out, (a,), lambda g: (g[index],))


def add_rows(a: Tensor, index, rows: Tensor) -> Tensor:
    """Copy of ``a`` with ``rows`` added at row positions ``index`` (distinct)."""
    index = np.asarray(index, dtype=np.intp)
    if rows.shape != (len(index),) + a.shape[1:]:
        raise ShapeError(f"add_rows: rows {rows.shape} do not fit {a.shape} at {len(index)} positions")
    out = a.data.copy()
    out[index] += rows.data
    return make_result(out, (a, rows), lambda g: (g, g[index]))


# -- composite cells --------------------------------------------------------------


def gru_cell(
    x: Tensor, h: Tensor, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor, b_hh: Tensor
) -> Tensor:
    """Standard GRU update, rows are independent cells.

    ``w_ih`` is (input, 3*hidden) and ``w_hh`` is (hidden, 3*hidden) with the
    reset, update and candidate blocks in that order.
    """
    d = h.shape[-1]
    if w_ih.shape[1] != 3 * d or w_hh.shape != (d, 3 * d):
        raise ShapeError(f"gru_cell: weights {w_ih.shape}, {w_hh.shape} for hidden size {d}")
    gi = linear(x, w_ih, b_ih)
    gh = linear(h, w_hh, b_hh)
    gi_r, gi_z, gi_n = _split3(gi)
    gh_r, gh_z, gh_n = _split3(gh)
    r = sigmoid(add(gi_r, gh_r))
    z = sigmoid(add(gi_z, gh_z))
    n = tanh(add(gi_n, mul(r, gh_n)))
    # h' = (1 - z) * n + z * h = n + z * (h - n)
    return add(n, mul(z, sub(h, n)))


def _split3(a: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    d = a.shape[-1] // 3
    data = a.data
    parts = (data[:, :d], data[:, d : 2 * d], data[:, 2 * d :])
    shape = a.shape
    out = []
    for k in range(3):
        lo = k * d

        def backward(g, lo=lo):
            full = np.zeros(shape, dtype=g.dtype)
            full[:, lo : lo + d] = g
            return (full,)

        out.append(make_result(parts[k], (a,), backward))
    return out[0], out[1], out[2]
