"""Classical and test-time-optimized MI estimators: KSG, KDE and MINE."""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma
from scipy.stats import gaussian_kde

from .autodiff import AdamState, ParamStore, Tensor, adam_step, backward, no_grad, ops
from .copula import empirical_copula
from .simdist import JointSequence


def _prepare(seq: JointSequence, copula: bool) -> tuple[np.ndarray, np.ndarray]:
    if copula:
        r = empirical_copula(seq)
        return r.us, r.vs
    return seq.xs, seq.ys


def _jitter_duplicates(x: np.ndarray, y: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    pts = np.stack([x, y], axis=1)
    if len(np.unique(pts, axis=0)) == len(pts):
        return x, y
    rng = np.random.default_rng(seed)
    out = []
    for c in (x, y):
        span = float(np.ptp(c)) or 1.0
        out.append(c + rng.uniform(-1e-10 * span, 1e-10 * span, c.size))
    return out[0], out[1]


def _ksg_from_counts(k: int, n: int, nx: np.ndarray, ny: np.ndarray) -> float:
    return float(digamma(k) + digamma(n) - np.mean(digamma(nx + 1) + digamma(ny + 1)))


def _prepare_ksg(seq: JointSequence, copula: bool) -> tuple[np.ndarray, np.ndarray]:
    # integer ranks keep grid distances exact, so reflecting a coordinate
    # (a sign flip) cannot perturb the many distance ties
    if copula:
        r = empirical_copula(seq)
        n = len(seq)
        return np.rint(r.us * n), np.rint(r.vs * n)
    return seq.xs, seq.ys


def ksg_mi(seq: JointSequence, k: int = 5, copula: bool = False, jitter_seed: int = 0) -> float:
    """Kraskov-Stoegbauer-Grassberger estimator (first variant), in nats.

    Joint neighbours use the max-norm; marginal counts are strict (distance
    < the k-th joint neighbour distance), self excluded.  With ``copula`` the
    coordinates are replaced by their ranks (a common rescaling of the
    copula values, which KSG is invariant to).
    """
    x, y = _prepare_ksg(seq, copula)
    n = x.size
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < T, got k={k}, T={n}")
    x, y = _jitter_duplicates(x, y, jitter_seed)
    pts = np.stack([x, y], axis=1)
    dist, _ = cKDTree(pts).query(pts, k=k + 1, p=np.inf)
    eps = dist[:, k]
    r = np.nextafter(eps, 0.0)
    nx = cKDTree(x[:, None]).query_ball_point(x[:, None], r, p=np.inf, return_length=True) - 1
    ny = cKDTree(y[:, None]).query_ball_point(y[:, None], r, p=np.inf, return_length=True) - 1
    return _ksg_from_counts(k, n, nx, ny)


def ksg_mi_bruteforce(seq: JointSequence, k: int = 5, copula: bool = False, jitter_seed: int = 0) -> float:
    """O(T^2) reference implementation of :func:`ksg_mi`."""
    x, y = _prepare_ksg(seq, copula)
    n = x.size
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < T, got k={k}, T={n}")
    x, y = _jitter_duplicates(x, y, jitter_seed)
    dx = np.abs(x[:, None] - x[None, :])
    dy = np.abs(y[:, None] - y[None, :])
    dz = np.maximum(dx, dy)
    np.fill_diagonal(dz, np.inf)
    eps = np.sort(dz, axis=1)[:, k - 1]
    nx = np.sum(dx < eps[:, None], axis=1) - 1
    ny = np.sum(dy < eps[:, None], axis=1) - 1
    return _ksg_from_counts(k, n, nx, ny)


def kde_mi(seq: JointSequence, copula: bool = False) -> float:
    """Resubstitution MI from Gaussian KDEs with Silverman bandwidths, in nats."""
    x, y = _prepare(seq, copula)
    if x.size < 10:
        raise ValueError(f"KDE needs at least 10 samples, got {x.size}")
    if np.var(x) == 0 or np.var(y) == 0:
        raise ValueError("KDE is degenerate: a coordinate has zero variance")
    xy = np.stack([x, y])
    joint = gaussian_kde(xy, bw_method="silverman")
    px = gaussian_kde(x, bw_method="silverman")
    py = gaussian_kde(y, bw_method="silverman")
    return float(np.mean(joint.logpdf(xy) - px.logpdf(x) - py.logpdf(y)))


# ----------------------------------------------------------------------------
# MINE

class MlpDiscriminant:
    """Small relu MLP from R^2 to R used as a per-distribution discriminant."""

    def __init__(self, rng: np.random.Generator, hidden=(64, 64), dtype=np.float64):
        self.params = ParamStore()
        sizes = (2, *hidden, 1)
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / math.sqrt(a)
            self.params.add(f"l{i}.w", rng.uniform(-bound, bound, (a, b)).astype(dtype))
            self.params.add(f"l{i}.b", rng.uniform(-bound, bound, b).astype(dtype))
        self.n_layers = len(sizes) - 1

    def __call__(self, z: np.ndarray) -> Tensor:
        h = Tensor(np.asarray(z, dtype=self.params["l0.w"].dtype))
        for i in range(self.n_layers):
            h = ops.add(ops.matmul(h, self.params[f"l{i}.w"]), self.params[f"l{i}.b"])
            if i < self.n_layers - 1:
                h = ops.relu(h)
        return ops.reshape(h, (h.shape[0],))


def _dv_tensor(f_joint: Tensor, f_marg: Tensor) -> Tensor:
    n = f_marg.shape[0]
    lme = ops.add(ops.logsumexp(ops.reshape(f_marg, (1, n)), axis=-1),
                  Tensor(np.full(1, -math.log(n), dtype=f_marg.dtype)))
    return ops.sub(ops.reshape(ops.mean(f_joint), (1,)), lme)


class MineDivergenceError(RuntimeError):
    pass


def mine_mi(seq: JointSequence, iters: int = 500, batch: int = 100, lr: float = 1e-3,
            rng: np.random.Generator | int = 0, copula: bool = True,
            hidden=(64, 64)) -> float:
    """MINE: fit a fresh MLP to the DV bound on this sequence, then evaluate.

    Each iteration draws ``batch`` joint pairs and pairs their x with
    ``batch`` independently drawn y values; the final estimate is the DV value
    on the full sequence with one full shuffle of y.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    x, y = _prepare(seq, copula)
    n = x.size
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not 1 <= batch <= n:
        raise ValueError(f"batch must be in [1, T], got {batch} for T={n}")
    if copula:
        x, y = x - 0.5, y - 0.5
    net = MlpDiscriminant(rng, hidden)
    state = AdamState()
    for it in range(iters):
        idx = rng.choice(n, batch, replace=False)
        idx_m = rng.choice(n, batch, replace=False)
        zj = np.stack([x[idx], y[idx]], axis=1)
        zm = np.stack([x[idx], y[idx_m]], axis=1)
        net.params.zero_grad()
        obj = _dv_tensor(net(zj), net(zm))
        value = float(obj.data[0])
        if not math.isfinite(value):
            raise MineDivergenceError(f"non-finite MINE objective at iteration {it}")
        backward(ops.sum(obj))
        adam_step(net.params, state, lr, maximize=True)
    perm = rng.permutation(n)
    with no_grad():
        final = _dv_tensor(net(np.stack([x, y], axis=1)), net(np.stack([x, y[perm]], axis=1)))
    return float(final.data[0])
