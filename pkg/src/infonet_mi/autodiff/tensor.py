"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and, when gradients are enabled,
remembers the op that produced it.  :func:`backward` walks the recorded graph
in reverse topological order and accumulates gradients into leaf tensors that
have ``requires_grad=True``.  Intermediate gradients are released as soon as
they have been propagated.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True
_DEBUG_FINITE = False


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def set_debug(flag: bool) -> None:
    """When on, every op checks its output for NaN/Inf and raises."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(flag)


class Tensor:
    """Dense array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim > 4:
            raise ValueError(f"tensors are limited to 4 dimensions, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar; the functional ops live in ``ops``
    def __add__(self, other):
        from . import ops
        return ops.add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, _as_tensor(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, _as_tensor(other, self))


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=like.dtype)
    if arr.ndim == 0:
        arr = np.full(like.shape, arr, dtype=like.dtype)
    return Tensor(arr)


def make_node(data: np.ndarray, parents: Sequence[Tensor],
              backward: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result, recording ``backward`` only when some parent needs it."""
    if _DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite value produced by {backward.__qualname__}")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        raise ValueError(f"gradient shape {g.shape} does not match tensor shape {t.data.shape}")
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    # never mutate in place: ``g`` may be shared with sibling inputs
    t.grad = g if t.grad is None else t.grad + g


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into every leaf with ``requires_grad``.

    Raises
    ------
    ValueError
        If ``output`` is not a scalar (size-1) tensor.
    """
    if output.data.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return
    order = _topo_order(output)
    output.grad = np.ones_like(output.data)
    for node in reversed(order):
        if node._backward is None:
            continue
        g = node.grad
        if g is None:
            continue
        node._backward(g)
        # intermediates keep no gradient storage once propagated
        node.grad = None
        node._backward = None
        node._parents = ()


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
