"""Differentiable primitives.

Shapes are explicit: elementwise binary ops need equal shapes, except
:func:`add` which also accepts a trailing-dims bias.  Anything else goes
through :func:`broadcast_to`.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import Tensor, accumulate, make_node


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _is_bias(a: Tensor, b: Tensor) -> bool:
    return b.ndim < a.ndim and a.shape[a.ndim - b.ndim:] == b.shape


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and not _is_bias(a, b):
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def _bw(g):
        accumulate(a, g)
        accumulate(b, _reduce_to(g, b.shape))

    return make_node(a.data + b.data, (a, b), _bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")

    def _bw(g):
        accumulate(a, g)
        accumulate(b, -g)

    return make_node(a.data - b.data, (a, b), _bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and not _is_bias(a, b):
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")

    def _bw(g):
        if a.requires_grad:
            accumulate(a, g * b.data)
        if b.requires_grad:
            accumulate(b, _reduce_to(g * a.data, b.shape))

    return make_node(a.data * b.data, (a, b), _bw)


def scale(a: Tensor, c: float) -> Tensor:
    def _bw(g):
        accumulate(a, g * c)

    return make_node(a.data * c, (a,), _bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for ``a (..., m, k)`` with either a shared ``b (k, n)`` or a
    batched ``b (..., k, n)`` carrying the same leading dims."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: need >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul: batch dims differ, {a.shape} vs {b.shape}")
    out = np.matmul(a.data, b.data)

    def _bw(g):
        if a.requires_grad:
            accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            if shared:
                k, n = b.shape
                accumulate(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))
            else:
                accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return make_node(out, (a, b), _bw)


bmm = matmul


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    if axes is None:
        axes = list(range(a.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def _bw(g):
        accumulate(a, np.transpose(g, inv))

    return make_node(np.transpose(a.data, axes), (a,), _bw)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape

    def _bw(g):
        accumulate(a, g.reshape(src))

    return make_node(a.data.reshape(tuple(shape)), (a,), _bw)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Repeat ``a`` along new leading axes."""
    shape = tuple(shape)
    if shape[len(shape) - a.ndim:] != a.shape:
        raise ValueError(f"broadcast_to: cannot expand {a.shape} to {shape}")

    def _bw(g):
        accumulate(a, _reduce_to(g, a.shape))

    return make_node(np.broadcast_to(a.data, shape).copy(), (a,), _bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = a.data - a.data.max(axis=-1, keepdims=True)
    np.exp(x, out=x)
    x /= x.sum(axis=-1, keepdims=True)

    def _bw(g):
        s = (g * x).sum(axis=-1, keepdims=True)
        d = g - s
        d *= x
        accumulate(a, d)

    return make_node(x, (a,), _bw)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise affine."""
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(f"layer_norm: affine shapes {gamma.shape}, {beta.shape} vs feature dim {d}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def _bw(g):
        if gamma.requires_grad:
            accumulate(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            accumulate(beta, g.reshape(-1, d).sum(axis=0))
        if a.requires_grad:
            gx = g * gamma.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            accumulate(a, rstd * (gx - m1 - xhat * m2))

    return make_node(out, (a, gamma, beta), _bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    x = a.data
    x2 = x * x
    t = x2 * 0.044715
    t += 1.0
    t *= x
    t *= _GELU_C
    np.tanh(t, out=t)
    out = 1.0 + t
    out *= x
    out *= 0.5

    def _bw(g):
        d = 1.0 - t * t
        d *= x
        d *= (x2 * (3 * 0.044715) + 1.0) * _GELU_C
        d += 1.0 + t
        d *= 0.5
        d *= g
        accumulate(a, d)

    return make_node(out, (a,), _bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def _bw(g):
        accumulate(a, g * mask)

    return make_node(a.data * mask, (a,), _bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def _bw(g):
        accumulate(a, g * out)

    return make_node(out, (a,), _bw)


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis)

    def _bw(g):
        if axis is None:
            accumulate(a, np.full(a.shape, g, dtype=a.dtype))
        else:
            accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return make_node(np.asarray(out, dtype=a.dtype), (a,), _bw)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted log-sum-exp along ``axis``."""
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)

    def _bw(g):
        accumulate(a, np.expand_dims(g, axis) * (e / s))

    return make_node(out.astype(a.dtype, copy=False), (a,), _bw)


def gather(a: Tensor, index: np.ndarray) -> Tensor:
    """Pick ``a[..., index[..., j]]`` along the last axis.

    ``a`` has shape ``(B, n)`` and ``index`` integer shape ``(B, m)``; output
    is ``(B, m)``.  Repeated indices accumulate in the backward pass.
    """
    index = np.asarray(index)
    if a.ndim != 2 or index.ndim != 2 or index.shape[0] != a.shape[0]:
        raise ValueError(f"gather: expected (B, n) source and (B, m) index, got {a.shape} and {index.shape}")
    B, n = a.shape
    out = np.take_along_axis(a.data, index, axis=1)

    def _bw(g):
        flat = (index + (np.arange(B) * n)[:, None]).ravel()
        acc = np.bincount(flat, weights=g.ravel(), minlength=B * n)
        accumulate(a, acc.reshape(B, n).astype(a.dtype, copy=False))

    return make_node(out, (a,), _bw)


def _replicate_pad_matrix(n: int, r: int, dtype) -> np.ndarray:
    idx = np.clip(np.arange(-r, n + r), 0, n - 1)
    e = np.zeros((n + 2 * r, n), dtype=dtype)
    e[np.arange(n + 2 * r), idx] = 1.0
    return e


def conv2d_fixed(a: Tensor, kernel: np.ndarray) -> Tensor:
    """Same-size 2-d correlation of ``a (B, H, W)`` with a constant odd kernel,
    replicate-padding the borders."""
    kernel = np.asarray(kernel, dtype=a.dtype)
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d_fixed: kernel must be odd-sized, got {kernel.shape}")
    if a.ndim != 3:
        raise ValueError(f"conv2d_fixed: expected (B, H, W), got {a.shape}")
    _, H, W = a.shape
    rh, rw = kh // 2, kw // 2
    eh = _replicate_pad_matrix(H, rh, a.dtype)
    ew = _replicate_pad_matrix(W, rw, a.dtype)
    padded = eh @ a.data @ ew.T
    out = np.zeros_like(a.data)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * padded[:, i:i + H, j:j + W]

    def _bw(g):
        gp = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                gp[:, i:i + H, j:j + W] += kernel[i, j] * g
        accumulate(a, eh.T @ gp @ ew)

    return make_node(out, (a,), _bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        other = tuple(s for i, s in enumerate(t.shape) if i != ax)
        ref = tuple(s for i, s in enumerate(tensors[0].shape) if i != ax)
        if other != ref:
            raise ValueError(f"concat: shape mismatch {tensors[0].shape} vs {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def _bw(g):
        start = 0
        for t, s in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(start, start + s)
            accumulate(t, g[tuple(sl)])
            start += s

    return make_node(out, tensors, _bw)
