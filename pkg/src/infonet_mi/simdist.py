"""Simulated joint distributions and their ground-truth mutual information.

Everything random takes an explicit ``numpy.random.Generator``; there is no
module-level random state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

COV_JITTER = 0.01
MEAN_RANGE = 5.0
FACTOR_RANGE = 3.0
DEFAULT_MCI_SAMPLES = 200_000
MCI_STDERR_GATE = 0.005
DEFAULT_REJECTION_CAP = 1_000_000


class GenerationError(RuntimeError):
    """Raised when rejection sampling cannot fill a requested MI level."""


@dataclass(frozen=True)
class GmmSpec:
    """A K-component Gaussian mixture in ``dim`` dimensions."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        cov = np.asarray(self.covs, dtype=np.float64)
        if cov.ndim == 2:
            cov = cov[None]
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", cov)
        K, d = mu.shape
        if w.shape != (K,) or cov.shape != (K, d, d):
            raise ValueError(f"inconsistent GMM shapes: weights {w.shape}, means {mu.shape}, covs {cov.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if not np.allclose(cov, np.swapaxes(cov, 1, 2), rtol=0, atol=1e-12):
            raise ValueError("covariances must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        object.__setattr__(self, "_chol", chol)

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def chol(self) -> np.ndarray:
        return self._chol

    def marginal(self, axes) -> "GmmSpec":
        axes = np.atleast_1d(axes)
        return GmmSpec(self.weights.copy(), self.means[:, axes],
                       self.covs[:, axes][:, :, axes])

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "covs": self.covs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GmmSpec":
        return cls(np.array(d["weights"]), np.array(d["means"]), np.array(d["covs"]))


@dataclass(frozen=True)
class JointSequence:
    """T paired scalar samples."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.float64).ravel()
        ys = np.asarray(self.ys, dtype=np.float64).ravel()
        if xs.shape != ys.shape:
            raise ValueError(f"xs and ys differ in length: {xs.size} vs {ys.size}")
        if xs.size < 2:
            raise ValueError("a joint sequence needs at least 2 samples")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("joint sequence contains non-finite values")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    def __len__(self) -> int:
        return self.xs.size

    @property
    def T(self) -> int:
        return self.xs.size


@dataclass(frozen=True)
class GroundTruth:
    mi_nats: float
    method: Literal["analytic", "mci", "quadrature"]
    stderr: float = 0.0


def sample_gmm_spec(max_components: int, dim: int, rng: np.random.Generator,
                    n_components: int | None = None) -> GmmSpec:
    """Draw a random mixture following the training-data protocol.

    K is uniform on ``1..max_components`` (or fixed to ``n_components``),
    weights are Dirichlet(1), mean coordinates are uniform on [-5, 5] and each
    covariance is ``D D^T + 0.01 I`` with ``D`` entries uniform on [-3, 3].
    """
    if max_components < 1:
        raise ValueError(f"max_components must be >= 1, got {max_components}")
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    if n_components is None:
        K = int(rng.integers(1, max_components + 1))
    else:
        if not 1 <= n_components:
            raise ValueError(f"n_components must be >= 1, got {n_components}")
        K = int(n_components)
    w = rng.dirichlet(np.ones(K)) if K > 1 else np.ones(1)
    w = w / w.sum()
    means = rng.uniform(-MEAN_RANGE, MEAN_RANGE, size=(K, dim))
    D = rng.uniform(-FACTOR_RANGE, FACTOR_RANGE, size=(K, dim, dim))
    covs = D @ np.swapaxes(D, 1, 2) + COV_JITTER * np.eye(dim)
    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
    return GmmSpec(w, means, covs)


def sample_gmm(spec: GmmSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. draws, shape ``(n, dim)``."""
    comp = rng.choice(spec.K, size=n, p=spec.weights)
    z = rng.standard_normal((n, spec.dim))
    return spec.means[comp] + np.einsum("nij,nj->ni", spec.chol[comp], z)


def sample_joint(spec: GmmSpec, T: int, rng: np.random.Generator) -> JointSequence:
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if spec.dim != 2:
        raise ValueError(f"sample_joint needs a 2-d mixture, got dim={spec.dim}")
    z = sample_gmm(spec, T, rng)
    return JointSequence(z[:, 0], z[:, 1])


def gaussian_mi_analytic(rho: float) -> GroundTruth:
    """MI of a bivariate Gaussian with correlation ``rho``."""
    if not abs(rho) < 1:
        raise ValueError(f"|rho| must be < 1 (MI diverges), got {rho}")
    return GroundTruth(-0.5 * math.log1p(-rho * rho), "analytic", 0.0)


def gaussian_spec(rho: float, sx: float = 1.0, sy: float = 1.0,
                  mean=(0.0, 0.0)) -> GmmSpec:
    cov = np.array([[sx * sx, rho * sx * sy], [rho * sx * sy, sy * sy]])
    return GmmSpec(np.ones(1), np.asarray(mean, dtype=float)[None], cov[None])


def gmm_logpdf(spec: GmmSpec, points: np.ndarray) -> np.ndarray | float:
    """log density at one point ``(d,)`` or many points ``(n, d)``."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != spec.dim:
        raise ValueError(f"point dimension {pts.shape[1]} does not match mixture dimension {spec.dim}")
    d = spec.dim
    diff = pts[None, :, :] - spec.means[:, None, :]            # (K, n, d)
    sol = np.linalg.solve(spec.chol, np.swapaxes(diff, 1, 2))  # (K, d, n)
    maha = np.sum(sol * sol, axis=1)                           # (K, n)
    logdet = 2.0 * np.sum(np.log(np.diagonal(spec.chol, axis1=1, axis2=2)), axis=1)
    comp = -0.5 * (maha + logdet[:, None] + d * math.log(2 * math.pi))
    with np.errstate(divide="ignore"):
        logw = np.log(spec.weights)
    out = logsumexp(comp + logw[:, None], axis=0)
    return float(out[0]) if single else out


def gmm_marginals(spec: GmmSpec) -> tuple[GmmSpec, GmmSpec]:
    if spec.dim != 2:
        raise ValueError(f"gmm_marginals needs a 2-d mixture, got dim={spec.dim}")
    return spec.marginal(0), spec.marginal(1)


def mci_mi(spec: GmmSpec, n_samples: int, rng: np.random.Generator,
           axes: tuple[int, int] = (0, 1)) -> GroundTruth:
    """Monte-Carlo estimate of I(z[a]; z[b]) from the known density.

    ``axes`` selects the pair of coordinates; for a 2-d spec the default is the
    full joint.
    """
    if n_samples < 1000:
        raise ValueError(f"n_samples must be >= 1000, got {n_samples}")
    a, b = axes
    joint = spec if spec.dim == 2 and axes == (0, 1) else spec.marginal([a, b])
    px, py = joint.marginal(0), joint.marginal(1)
    z = sample_gmm(joint, n_samples, rng)
    ratio = gmm_logpdf(joint, z) - gmm_logpdf(px, z[:, :1]) - gmm_logpdf(py, z[:, 1:])
    return GroundTruth(float(ratio.mean()), "mci", float(ratio.std(ddof=1) / math.sqrt(n_samples)))


# ----------------------------------------------------------------------------
# leveled evaluation datasets

@dataclass
class LeveledRecord:
    level: float
    spec: GmmSpec
    gt: GroundTruth
    seq: JointSequence
    seed: int


def _level_index(value: float, levels: np.ndarray, tol: float) -> int | None:
    i = int(np.argmin(np.abs(levels - value)))
    return i if abs(levels[i] - value) <= tol else None


def gen_leveled_eval_set(levels, tol: float, per_level: int, T: int,
                         rng: np.random.Generator, max_components: int = 20,
                         n_mci: int = DEFAULT_MCI_SAMPLES,
                         rejection_cap: int = DEFAULT_REJECTION_CAP,
                         screen_samples: int = 4000) -> list[LeveledRecord]:
    """Rejection-sample mixtures until every MI level holds ``per_level`` specs.

    A cheap Monte-Carlo screen discards candidates that are clearly far from
    every unfilled level; survivors get the full ``n_mci`` estimate, which is
    what must land within ``tol`` of the level.  Records are returned grouped
    by level in ascending order.
    """
    levels = np.asarray(sorted(levels), dtype=float)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if per_level < 1:
        raise ValueError("per_level must be >= 1")
    buckets: list[list[LeveledRecord]] = [[] for _ in levels]
    attempts = np.zeros(len(levels), dtype=np.int64)
    while True:
        open_ = [i for i, b in enumerate(buckets) if len(b) < per_level]
        if not open_:
            break
        for i in open_:
            attempts[i] += 1
            if attempts[i] > rejection_cap:
                raise GenerationError(
                    f"MI level {levels[i]:g}: no acceptance after {rejection_cap} rejections")
        seed = int(rng.integers(2**63 - 1))
        sub = np.random.default_rng(seed)
        spec = sample_gmm_spec(max_components, 2, sub)
        screen = mci_mi(spec, max(screen_samples, 1000), sub)
        margin = tol + 4.0 * screen.stderr + 0.01
        cand = int(np.argmin(np.abs(levels - screen.mi_nats)))
        if abs(levels[cand] - screen.mi_nats) > margin or len(buckets[cand]) >= per_level:
            continue
        gt = mci_mi(spec, n_mci, sub)
        if gt.stderr >= MCI_STDERR_GATE:
            continue
        idx = _level_index(gt.mi_nats, levels, tol)
        if idx is None or len(buckets[idx]) >= per_level:
            continue
        seq = sample_joint(spec, T, sub)
        buckets[idx].append(LeveledRecord(float(levels[idx]), spec, gt, seq, seed))
    return [r for b in buckets for r in b]


# ----------------------------------------------------------------------------
# other benchmark families

def halfcube(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.abs(x) ** 1.5 * np.sign(x)


def transform_family(seq: JointSequence, family: Literal["halfcube", "asinh"]) -> JointSequence:
    """Apply a strictly increasing map to both coordinates (MI unchanged)."""
    if family == "halfcube":
        f = halfcube
    elif family == "asinh":
        f = np.arcsinh
    else:
        raise ValueError(f"unknown family {family!r}")
    return JointSequence(f(seq.xs), f(seq.ys))


def additive_noise_mi(eps: float, n_grid: int = 100_001) -> float:
    """I(X; X+N) for X ~ U(0,1), N ~ U(-eps, eps), by quadrature of h(Y)."""
    if not eps > 0:
        raise ValueError(f"noise level must be positive, got {eps}")
    lo, hi = -eps, 1.0 + eps
    y = np.linspace(lo, hi, n_grid)
    # density of Y: (1/2eps) * |[0,1] ∩ [y-eps, y+eps]|
    p = (np.minimum(1.0, y + eps) - np.maximum(0.0, y - eps)).clip(min=0.0) / (2 * eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(p > 0, -p * np.log(p), 0.0)
    h_y = float(integrate.trapezoid(integrand, y))
    return h_y - math.log(2 * eps)


def sample_additive_noise(eps: float, T: int, rng: np.random.Generator) -> tuple[JointSequence, GroundTruth]:
    if not eps > 0:
        raise ValueError(f"noise level must be positive, got {eps}")
    x = rng.uniform(0.0, 1.0, T)
    y = x + rng.uniform(-eps, eps, T)
    return JointSequence(x, y), GroundTruth(additive_noise_mi(eps), "quadrature", 0.0)


HighDimKind = Literal["one_feature", "two_features", "indep_coords"]


def highdim_cross_structure(kind: HighDimKind, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(A, c)`` with ``Y = A X + c Z`` for the dependent construction."""
    r = 1.0 / math.sqrt(2.0)
    if kind == "one_feature":
        A = r * np.full((d, d), 1.0 / math.sqrt(d))
    elif kind == "two_features":
        if d < 2 or d % 2:
            raise ValueError(f"two_features needs an even d >= 2, got {d}")
        A = np.zeros((d, d))
        h = d // 2
        A[:h, :h] = 1.0 / d
        A[h:, h:] = 1.0 / d
        A *= r
    elif kind == "indep_coords":
        A = r * np.eye(d)
    else:
        raise ValueError(f"unknown dependency kind {kind!r}")
    return A, r


def gen_highdim_pair(kind: HighDimKind, d: int, n: int, dependent: bool,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """High-dimensional (X, Y) pairs, each ``(n, d)``.

    Dependent constructions: one_feature ``Y = (s 1 + Z)/sqrt2`` with
    ``s = 1^T X / sqrt d``; two_features uses the two half-sums scaled by
    ``1/d``; indep_coords ``Y = (X + Z)/sqrt2``.  Independent pairs draw ``Y``
    as a fresh standard normal.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    A, c = highdim_cross_structure(kind, d)
    X = rng.standard_normal((n, d))
    if not dependent:
        return X, rng.standard_normal((n, d))
    Z = rng.standard_normal((n, d))
    return X, X @ A.T + c * Z


def highdim_covariances(kind: HighDimKind, d: int, dependent: bool) -> tuple[np.ndarray, np.ndarray]:
    """Cross-covariance Cov(X, Y) and Cov(Y) of :func:`gen_highdim_pair`."""
    if not dependent:
        highdim_cross_structure(kind, d)
        return np.zeros((d, d)), np.eye(d)
    A, c = highdim_cross_structure(kind, d)
    return A.T, A @ A.T + c * c * np.eye(d)


# ----------------------------------------------------------------------------
# dataset directories

DATASET_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class DatasetEntry:
    id: str
    file: str
    family: str
    K: int | None
    gt_mi_nats: float
    gt_method: str
    gt_stderr: float
    seed: int | None

    def to_dict(self) -> dict:
        return {"id": self.id, "file": self.file, "family": self.family, "K": self.K,
                "gt_mi_nats": self.gt_mi_nats, "gt_method": self.gt_method,
                "gt_stderr": self.gt_stderr, "seed": self.seed}


class DatasetFormatError(ValueError):
    pass


def write_sequence(path, seq: JointSequence) -> None:
    """Raw little-endian f64, interleaved ``x0, y0, x1, y1, ...``."""
    inter = np.empty(2 * len(seq), dtype="<f8")
    inter[0::2] = seq.xs
    inter[1::2] = seq.ys
    with open(path, "wb") as fh:
        fh.write(inter.tobytes())


def read_sequence(path, T: int | None = None) -> JointSequence:
    raw = np.fromfile(path, dtype="<f8")
    if raw.size % 2:
        raise DatasetFormatError(f"{path}: odd number of values ({raw.size}); expected x,y pairs")
    if T is not None and raw.size != 2 * T:
        raise DatasetFormatError(f"{path}: holds {raw.size // 2} pairs, manifest says T={T}")
    return JointSequence(raw[0::2].astype(np.float64), raw[1::2].astype(np.float64))


def leveled_entries(records: list[LeveledRecord]) -> list[tuple[DatasetEntry, JointSequence]]:
    out = []
    counters: dict[float, int] = {}
    for r in records:
        i = counters.get(r.level, 0)
        counters[r.level] = i + 1
        rid = f"gmm_l{r.level:.2f}_{i:04d}"
        out.append((DatasetEntry(rid, rid + ".bin", "gmm", r.spec.K, r.gt.mi_nats, r.gt.method,
                                 r.gt.stderr, r.seed), r.seq))
    return out


def write_dataset(out_dir, items: list[tuple[DatasetEntry, JointSequence]], extra: dict | None = None) -> None:
    """Write ``manifest.json`` plus one binary file per sequence.

    All sequences must share one length ``T``.  The manifest is written with
    sorted keys so equal inputs give byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not items:
        raise ValueError("dataset has no records")
    Ts = {len(seq) for _, seq in items}
    if len(Ts) != 1:
        raise ValueError(f"all sequences must share one length, got {sorted(Ts)}")
    ids = [e.id for e, _ in items]
    if len(set(ids)) != len(ids):
        raise ValueError("record ids must be unique")
    for entry, seq in items:
        write_sequence(out / entry.file, seq)
    manifest = {"format_version": DATASET_FORMAT_VERSION, "T": Ts.pop(),
                "records": [e.to_dict() for e, _ in items]}
    if extra:
        manifest.update(extra)
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_dataset(path) -> tuple[dict, list[tuple[DatasetEntry, JointSequence]]]:
    root = Path(path)
    mpath = root / MANIFEST_NAME
    if not mpath.is_file():
        raise DatasetFormatError(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{mpath}: invalid JSON: {exc}") from exc
    version = manifest.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise DatasetFormatError(f"{mpath}: unsupported format_version {version!r}")
    T = manifest.get("T")
    fields_ = ("id", "file", "family", "K", "gt_mi_nats", "gt_method", "gt_stderr", "seed")
    items = []
    for i, rec in enumerate(manifest.get("records", [])):
        missing = [f for f in fields_ if f not in rec]
        if missing:
            raise DatasetFormatError(f"{mpath}: record {i} lacks {missing}")
        entry = DatasetEntry(**{f: rec[f] for f in fields_})
        items.append((entry, read_sequence(root / entry.file, T)))
    return manifest, items
