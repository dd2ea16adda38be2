"""Sliced mutual information over random one-dimensional projections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .simdist import JointSequence

DEFAULT_SLICES = 100
INDEPENDENCE_SLICES = 1000


class SliceEstimationError(RuntimeError):
    """A scalar estimator failed on one slice; ``slice_index`` says which."""

    def __init__(self, slice_index: int, cause: BaseException | str):
        self.slice_index = slice_index
        super().__init__(f"estimator failed on slice {slice_index}: {cause}")


class ScalarEstimator(Protocol):
    """``f(seq, seed) -> nats``; an optional ``batch(seqs, seeds)`` evaluates many at once."""

    def __call__(self, seq: JointSequence, seed: int) -> float: ...


@dataclass(frozen=True)
class ProjectionSet:
    dirs_x: np.ndarray
    dirs_y: np.ndarray
    seeds: np.ndarray

    def __post_init__(self):
        for name in ("dirs_x", "dirs_y"):
            d = getattr(self, name)
            if d.ndim != 2:
                raise ValueError(f"{name} must be (m, d), got shape {d.shape}")
            if np.any(np.abs(np.linalg.norm(d, axis=1) - 1.0) > 1e-9):
                raise ValueError(f"{name} rows must have unit norm")
        if not len(self.dirs_x) == len(self.dirs_y) == len(self.seeds):
            raise ValueError("projection counts disagree")

    @property
    def m(self) -> int:
        return len(self.seeds)


def sample_unit_direction(d: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the unit sphere in R^d (a normalized Gaussian)."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    while True:
        z = rng.standard_normal(d)
        n = np.linalg.norm(z)
        if n > 1e-300:
            return z / n


def sample_projections(m: int, dx: int, dy: int, rng: np.random.Generator) -> ProjectionSet:
    """``m`` direction pairs plus one estimator seed per slice.

    Slice ``j`` is generated entirely from its own child seed, so the set does
    not depend on how slices are later scheduled.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    roots = rng.integers(0, 2**63 - 1, size=m)
    px, py, seeds = [], [], []
    for r in roots:
        g = np.random.default_rng(int(r))
        px.append(sample_unit_direction(dx, g))
        py.append(sample_unit_direction(dy, g))
        seeds.append(int(g.integers(0, 2**63 - 1)))
    return ProjectionSet(np.array(px), np.array(py), np.array(seeds, dtype=np.int64))


def _as_2d(a: np.ndarray, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{what} must be (n, d), got shape {a.shape}")
    return a


def slice_estimates(estimator: ScalarEstimator, X: np.ndarray, Y: np.ndarray, m: int,
                    rng: np.random.Generator, chunk: int = 256) -> np.ndarray:
    """Per-slice estimates ``estimator(X phi_j, Y psi_j)`` for ``j < m``."""
    X = _as_2d(X, "X")
    Y = _as_2d(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"X and Y have different sample counts: {X.shape[0]} vs {Y.shape[0]}")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    proj = sample_projections(m, X.shape[1], Y.shape[1], rng)
    xs = X @ proj.dirs_x.T  # (n, m)
    ys = Y @ proj.dirs_y.T
    seqs = [JointSequence(xs[:, j], ys[:, j]) for j in range(m)]
    seeds = [int(s) for s in proj.seeds]
    out = np.empty(m)
    batch: Callable | None = getattr(estimator, "batch", None)
    for start in range(0, m, chunk if batch is not None else m):
        stop = min(m, start + chunk) if batch is not None else m
        if batch is not None:
            try:
                out[start:stop] = batch(seqs[start:stop], seeds[start:stop])
                continue
            except Exception:
                pass  # fall through to locate the failing slice
        for j in range(start, stop):
            try:
                out[j] = estimator(seqs[j], seeds[j])
            except Exception as exc:
                raise SliceEstimationError(j, exc) from exc
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        raise SliceEstimationError(int(bad[0]), "non-finite estimate")
    return out


def sliced_mi(estimator: ScalarEstimator, X: np.ndarray, Y: np.ndarray,
              m: int = DEFAULT_SLICES, rng: np.random.Generator | int = 0) -> float:
    """Mean of the scalar estimator over ``m`` random projection pairs, in nats.

    Each projected pair goes through the estimator's own preprocessing (for
    example its copula transform).
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return float(np.mean(slice_estimates(estimator, X, Y, m, rng)))
