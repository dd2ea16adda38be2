"""Parameter storage and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Ordered mapping of parameter names to leaf tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, v in state.items():
            p = self._params[k]
            if v.shape != p.data.shape:
                raise ValueError(f"parameter {k!r}: shape {v.shape} != {p.data.shape}")
            p.data = np.array(v, dtype=p.data.dtype, copy=True)

    def num_elements(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, maximize: bool = False) -> None:
    """One bias-corrected Adam update using the ``.grad`` of each parameter.

    Parameters without a gradient are skipped (their moments still exist).
    ``maximize=True`` ascends instead of descends.
    """
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params:
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        if p.grad is None:
            continue
        g = -p.grad if maximize else p.grad
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data = p.data - (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype, copy=False)


def clip_grad_norm(params: ParamStore, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        f = max_norm / (norm + 1e-12)
        for _, p in params:
            if p.grad is not None:
                p.grad = p.grad * f
    return norm
