"""Donsker-Varadhan machinery on discretized discriminant tables.

A table holds ``L x L`` values on the unit square; row ``i`` covers x-bin
``i`` and column ``j`` y-bin ``j``.  Reading off a continuous ``(u, v)`` uses
bilinear interpolation between cell centres ``((i + .5)/L, (j + .5)/L)``,
clamped to the edge values outside the outermost centres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, ops
from .copula import RankedSequence

ZERO_CELL_SENTINEL = -30.0
_RANGE_SLACK = 1e-12


@dataclass(frozen=True)
class DiscriminantTable:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] < 2:
            raise ValueError(f"table must be L x L with L >= 2, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("table contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def L(self) -> int:
        return self.values.shape[0]


def _check_unit(u: np.ndarray, what: str) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < -_RANGE_SLACK) or np.any(u > 1 + _RANGE_SLACK):
        raise ValueError(f"{what} coordinate outside [0, 1]")
    return np.clip(u, 0.0, 1.0)


def _axis_weights(u: np.ndarray, L: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    p = np.clip(u * L - 0.5, 0.0, L - 1.0)
    i0 = np.minimum(np.floor(p).astype(np.int64), L - 2)
    frac = p - i0
    return i0, i0 + 1, frac


def bilinear_plan(u: np.ndarray, v: np.ndarray, L: int):
    """Flat cell indices and weights of the four interpolation corners."""
    u = _check_unit(u, "u")
    v = _check_unit(v, "v")
    i0, i1, fx = _axis_weights(u, L)
    j0, j1, fy = _axis_weights(v, L)
    idx = (i0 * L + j0, i0 * L + j1, i1 * L + j0, i1 * L + j1)
    w = ((1 - fx) * (1 - fy), (1 - fx) * fy, fx * (1 - fy), fx * fy)
    return idx, w


def lookup(table: DiscriminantTable, u, v):
    """Interpolated table value at ``(u, v)``; vectorized over arrays."""
    idx, w = bilinear_plan(u, v, table.L)
    flat = table.values.reshape(-1)
    out = sum(flat[i] * wi for i, wi in zip(idx, w))
    return float(out) if np.ndim(out) == 0 else out


def shuffle_marginal(vs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random permutation (Fisher-Yates) of ``vs``."""
    vs = np.asarray(vs)
    if vs.shape[0] < 2:
        raise ValueError("need at least 2 values to shuffle")
    return rng.permutation(vs)


def logmeanexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    m = a.max(axis=axis, keepdims=True)
    out = np.log(np.mean(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out.squeeze(axis)


def dv_value(table: DiscriminantTable, joint: RankedSequence, marg_vs: np.ndarray) -> float:
    """Empirical DV objective: mean of the table on joint pairs minus the
    log-mean-exp of the table on ``(u_t, marg_vs_t)``."""
    if len(marg_vs) != len(joint):
        raise ValueError(f"marginal sample length {len(marg_vs)} != joint length {len(joint)}")
    t_joint = lookup(table, joint.us, joint.vs)
    t_marg = lookup(table, joint.us, marg_vs)
    return float(np.mean(t_joint) - logmeanexp(t_marg))


def dv_value_averaged(table: DiscriminantTable, joint: RankedSequence,
                      rng: np.random.Generator, n_shuffles: int = 1) -> float:
    """Mean DV value over ``n_shuffles`` independent marginal shuffles."""
    if n_shuffles < 1:
        raise ValueError("n_shuffles must be >= 1")
    return float(np.mean([dv_value(table, joint, shuffle_marginal(joint.vs, rng))
                          for _ in range(n_shuffles)]))


# ----------------------------------------------------------------------------
# differentiable path

def lookup_tensor(tables: Tensor, us: np.ndarray, vs: np.ndarray) -> Tensor:
    """Batched bilinear lookup: ``tables (N, L, L)``, ``us, vs (N, T)`` -> ``(N, T)``."""
    N, L, _ = tables.shape
    flat = ops.reshape(tables, (N, L * L))
    idx, w = bilinear_plan(us, vs, L)
    out = None
    for i, wi in zip(idx, w):
        term = ops.mul(ops.gather(flat, i), Tensor(wi.astype(tables.dtype, copy=False)))
        out = term if out is None else ops.add(out, term)
    return out


def dv_terms_tensor(tables: Tensor, us: np.ndarray, vs: np.ndarray,
                    vs_marg: np.ndarray) -> Tensor:
    """Per-item DV values ``(N,)`` as a differentiable tensor."""
    T = us.shape[1]
    joint = ops.mean(lookup_tensor(tables, us, vs), axis=1)
    marg = lookup_tensor(tables, us, vs_marg)
    lme = ops.add(ops.logsumexp(marg, axis=1),
                  Tensor(np.full(marg.shape[0], -math.log(T), dtype=tables.dtype)))
    return ops.sub(joint, lme)


def stack_ranked(joints: Sequence[RankedSequence]) -> tuple[np.ndarray, np.ndarray]:
    T = len(joints[0])
    if any(len(j) != T for j in joints):
        raise ValueError("all sequences in a batch must share the same length")
    return np.stack([j.us for j in joints]), np.stack([j.vs for j in joints])


def mi_loss_batch(tables: Tensor, joints: Sequence[RankedSequence],
                  rng: np.random.Generator) -> Tensor:
    """Mean DV objective over a batch, one fresh marginal shuffle per item.

    ``tables`` is an ``(N, L, L)`` tensor; the result is a scalar tensor to be
    maximized.
    """
    if tables.ndim != 3 or tables.shape[0] != len(joints):
        raise ValueError(f"got {tables.shape[0] if tables.ndim else 0} tables for {len(joints)} sequences")
    us, vs = stack_ranked(joints)
    vs_marg = np.stack([shuffle_marginal(v, rng) for v in vs])
    return ops.mean(dv_terms_tensor(tables, us, vs, vs_marg))


# ----------------------------------------------------------------------------
# discrete oracle

def _check_probs(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] < 2:
        raise ValueError(f"joint probabilities must be an L x L matrix, got {p.shape}")
    if np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("joint probabilities must be non-negative and sum to 1")
    return p


def optimal_table_discrete(joint_probs: np.ndarray) -> tuple[DiscriminantTable, float]:
    """Log density ratio table of a discrete joint and its exact MI."""
    p = _check_probs(joint_probs)
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    prod = px * py
    pos = p > 0
    table = np.full(p.shape, ZERO_CELL_SENTINEL)
    table[pos] = np.log(p[pos] / prod[pos])
    mi = float(np.sum(p[pos] * table[pos]))
    return DiscriminantTable(table), mi


def dv_value_exact(table: DiscriminantTable, joint_probs: np.ndarray) -> float:
    """DV objective with both expectations taken exactly over a discrete joint."""
    p = _check_probs(joint_probs)
    if p.shape != table.values.shape:
        raise ValueError(f"table shape {table.values.shape} != probability shape {p.shape}")
    q = p.sum(axis=1, keepdims=True) * p.sum(axis=0, keepdims=True)
    th = table.values
    pos = q > 0
    m = th[pos].max()
    second = math.log(float(np.sum(q[pos] * np.exp(th[pos] - m)))) + m
    return float(np.sum(p * th)) - second
