"""Empirical-copula (rank) transform."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simdist import JointSequence


@dataclass(frozen=True)
class RankedSequence:
    """Per-coordinate empirical CDF values, each in (0, 1]."""

    us: np.ndarray
    vs: np.ndarray

    def __len__(self) -> int:
        return self.us.size

    @property
    def T(self) -> int:
        return self.us.size


def rank_transform(values: np.ndarray) -> np.ndarray:
    """``rank(v_i) / n`` with 1-based ascending ranks, ties broken by index."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("rank transform requires finite inputs")
    n = values.size
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.arange(1, n + 1, dtype=np.float64)
    return ranks / n


def empirical_copula(seq: JointSequence) -> RankedSequence:
    if len(seq) < 2:
        raise ValueError("copula transform needs at least 2 samples")
    return RankedSequence(rank_transform(seq.xs), rank_transform(seq.ys))
