"""Evaluation suites and machine-readable reports.

Every suite is deterministic given its root seed (wall times aside) and
returns a :class:`SuiteReport`: a flat list of :class:`EvalRecord` rows plus a
JSON-serializable summary.  Nothing here plots; the CSV/JSON outputs are
meant to be plotted elsewhere.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .baselines import kde_mi, ksg_mi, mine_mi
from .simdist import (
    DatasetEntry,
    GmmSpec,
    JointSequence,
    LeveledRecord,
    gaussian_mi_analytic,
    gaussian_spec,
    gen_highdim_pair,
    highdim_covariances,
    mci_mi,
    sample_gmm,
    sample_gmm_spec,
    sample_joint,
)
from .smi import INDEPENDENCE_SLICES, sample_projections, slice_estimates

REPORT_SCHEMA_VERSION = 1
DEFAULT_SANITY_RHOS = tuple(round(r, 1) for r in np.arange(-0.9, 0.91, 0.1))
DEFAULT_LEVELS = tuple(round(0.1 * i, 1) for i in range(10))
DEFAULT_TIMING_LENGTHS = (200, 500, 1000, 2000, 5000)


# ----------------------------------------------------------------------------
# estimators

@dataclass
class NamedEstimator:
    """A scalar MI estimator ``fn(seq, seed) -> nats`` with an optional
    batched form ``batch(seqs, seeds) -> array``."""

    name: str
    fn: Callable[[JointSequence, int], float]
    batch: Callable[[Sequence[JointSequence], Sequence[int]], np.ndarray] | None = None

    def __call__(self, seq: JointSequence, seed: int = 0) -> float:
        return float(self.fn(seq, seed))

    def many(self, seqs: Sequence[JointSequence], seeds: Sequence[int]) -> np.ndarray:
        if self.batch is not None:
            return np.asarray(self.batch(list(seqs), list(seeds)), dtype=float)
        return np.array([self(s, sd) for s, sd in zip(seqs, seeds)])


ESTIMATOR_NAMES = ("infonet", "mine", "ksg", "kde")


def make_estimator(name: str, model=None, k: int = 5, mine_iters: int = 500,
                   mine_batch: int = 100, mine_lr: float = 1e-3,
                   copula: bool | None = None, label: str | None = None) -> NamedEstimator:
    """Build one of the registered estimators.

    ``copula=None`` picks each method's default: on for InfoNet and MINE,
    off for KSG and KDE.
    """
    label = label or name
    if name == "ksg":
        cop = bool(copula)
        return NamedEstimator(label, lambda s, seed: ksg_mi(s, k, copula=cop, jitter_seed=seed))
    if name == "kde":
        cop = bool(copula)
        return NamedEstimator(label, lambda s, seed: kde_mi(s, copula=cop))
    if name == "mine":
        cop = True if copula is None else copula
        return NamedEstimator(label, lambda s, seed: mine_mi(
            s, iters=mine_iters, batch=min(mine_batch, len(s)), lr=mine_lr, rng=seed, copula=cop))
    if name == "infonet":
        from .infonet.model import estimate_mi, estimate_mi_batch

        if model is None:
            raise ValueError("the infonet estimator needs a trained model")
        if copula is False:
            raise ValueError("InfoNet always consumes copula-transformed inputs")
        return NamedEstimator(label, lambda s, seed: estimate_mi(model, s, seed=seed),
                              lambda ss, seeds: estimate_mi_batch(model, ss, seeds=seeds))
    raise ValueError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATOR_NAMES)}")


# ----------------------------------------------------------------------------
# records and reports

@dataclass(frozen=True)
class EvalRecord:
    estimator: str
    distribution: str
    gt_mi_nats: float
    estimate_nats: float
    wall_time_seconds: float
    seed: int

    def __post_init__(self):
        if not self.wall_time_seconds >= 0:
            raise ValueError(f"wall time must be >= 0, got {self.wall_time_seconds}")
        if not math.isfinite(self.estimate_nats):
            raise ValueError(f"{self.estimator} on {self.distribution}: non-finite estimate")


@dataclass
class SuiteReport:
    suite: str
    seed: int
    estimators: list[str]
    records: list[EvalRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def report_basename(report: SuiteReport) -> str:
    ests = "+".join(e.replace("/", "_") for e in report.estimators)
    return f"{report.suite}_{ests}_seed{report.seed}"


def write_report(report: SuiteReport, out_dir) -> tuple[Path, Path]:
    """Write ``<suite>_<estimators>_seed<seed>.csv`` and ``.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = report_basename(report)
    csv_path, json_path = out / f"{base}.csv", out / f"{base}.json"
    names = [f.name for f in fields(EvalRecord)]
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for r in report.records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, n) for n in names)])
    doc = {"schema_version": REPORT_SCHEMA_VERSION, "suite": report.suite, "seed": report.seed,
           "estimators": report.estimators, "summary": report.summary}
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def read_records_csv(path) -> list[EvalRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EvalRecord(r["estimator"], r["distribution"], float(r["gt_mi_nats"]),
                       float(r["estimate_nats"]), float(r["wall_time_seconds"]), int(r["seed"]))
            for r in rows]


def read_summary_json(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    return doc


# ----------------------------------------------------------------------------
# Gaussian sanity sweep

def sanity_gaussian_suite(estimators: Sequence[NamedEstimator], rhos: Sequence[float],
                          T: int, seeds: Sequence[int]) -> SuiteReport:
    """Estimates on bivariate Gaussians against the analytic MI.

    The sample for ``(rhos[i], seed)`` is drawn from ``default_rng([seed, i])``
    so every estimator sees the same data.
    """
    for r in rhos:
        if not abs(r) < 1:
            raise ValueError(f"|rho| must be < 1, got {r}")
    rep = SuiteReport("sanity", int(seeds[0]) if len(seeds) else 0, [e.name for e in estimators])
    per = {e.name: {"rows": [], "runtime_seconds": 0.0} for e in estimators}
    for i, rho in enumerate(rhos):
        gt = gaussian_mi_analytic(rho).mi_nats
        data = [sample_joint(gaussian_spec(rho), T, np.random.default_rng([int(s), i])) for s in seeds]
        for est in estimators:
            vals = []
            for s, seq in zip(seeds, data):
                v, dt = _timed(est, seq, int(s))
                vals.append(v)
                per[est.name]["runtime_seconds"] += dt
                rep.records.append(EvalRecord(est.name, f"gauss_rho{rho:+.2f}", gt, v, dt, int(s)))
            per[est.name]["rows"].append({"rho": float(rho), "gt_mi_nats": gt,
                                          "mean_estimate": float(np.mean(vals)),
                                          "std_estimate": float(np.std(vals))})
    for name, d in per.items():
        errs = [abs(r.estimate_nats - r.gt_mi_nats) for r in rep.records if r.estimator == name]
        d["mean_abs_error"] = float(np.mean(errs)) if errs else float("nan")
    rep.summary = {"T": T, "n_seeds": len(seeds), "estimators": per}
    return rep


# ----------------------------------------------------------------------------
# binned error statistics

@dataclass(frozen=True)
class BinItem:
    level: float
    gt_mi_nats: float
    seq: JointSequence
    seed: int
    id: str


def bin_items_from_records(records: Sequence[LeveledRecord]) -> list[BinItem]:
    counters: dict[float, int] = {}
    out = []
    for r in records:
        i = counters.get(r.level, 0)
        counters[r.level] = i + 1
        out.append(BinItem(r.level, r.gt.mi_nats, r.seq, r.seed, f"gmm_l{r.level:.2f}_{i:04d}"))
    return out


def bin_items_from_dataset(manifest: dict, items: Sequence[tuple[DatasetEntry, JointSequence]]) -> list[BinItem]:
    """Assign each record to the nearest level listed in the manifest."""
    levels = manifest.get("levels")
    if not levels:
        raise ValueError("dataset manifest lists no MI levels")
    lv = np.asarray(levels, dtype=float)
    out = []
    for e, seq in items:
        level = float(lv[np.argmin(np.abs(lv - e.gt_mi_nats))])
        out.append(BinItem(level, e.gt_mi_nats, seq, int(e.seed or 0), e.id))
    return out


def binned_error_suite(items: Sequence[BinItem], estimators: Sequence[NamedEstimator],
                       levels: Sequence[float] | None = None, seed: int = 0) -> SuiteReport:
    """Per level and estimator: mean and (population) variance of estimate - gt."""
    lv = sorted({it.level for it in items}) if levels is None else list(levels)
    counts = {l: sum(it.level == l for it in items) for l in lv}
    empty = [l for l, c in counts.items() if c == 0]
    if empty:
        raise ValueError(f"no sequences at MI level(s) {empty}")
    rep = SuiteReport("bins", seed, [e.name for e in estimators])
    table: dict[str, dict[str, dict]] = {}
    for est in estimators:
        seeds = [it.seed for it in items]
        t0 = time.perf_counter()
        vals = est.many([it.seq for it in items], seeds)
        per_item = (time.perf_counter() - t0) / max(1, len(items))
        errs: dict[float, list[float]] = {l: [] for l in lv}
        for it, v in zip(items, vals):
            rep.records.append(EvalRecord(est.name, it.id, it.gt_mi_nats, float(v), per_item, it.seed))
            if it.level in errs:
                errs[it.level].append(float(v) - it.gt_mi_nats)
        table[est.name] = {f"{l:.2f}": {"level": l, "n": len(e), "mean_error": float(np.mean(e)),
                                        "variance": float(np.var(e))} for l, e in errs.items()}
    rep.summary = {"levels": lv, "table": table}
    return rep


# ----------------------------------------------------------------------------
# correlation-order accuracy

@dataclass(frozen=True)
class Triplet:
    xs: np.ndarray
    ys: np.ndarray
    ys2: np.ndarray
    gt_xy: float
    gt_xy2: float
    stderr_xy: float
    stderr_xy2: float
    K: int
    seed: int

    def __post_init__(self):
        if not abs(self.gt_xy - self.gt_xy2) > 2 * (self.stderr_xy + self.stderr_xy2):
            raise ValueError("triplet label is ambiguous: MI gap within 2 combined stderrs")

    @property
    def label(self) -> int:
        return int(self.gt_xy > self.gt_xy2)

    def pair(self, which: int) -> JointSequence:
        return JointSequence(self.xs, self.ys if which == 0 else self.ys2)


def shared_x_spec(K: int, rng: np.random.Generator) -> GmmSpec:
    """3-d mixture over ``(x, y, y')`` from two independently drawn 2-d joints.

    Both joints follow the training protocol; the second has its x-coordinate
    rescaled per component (which keeps every component's correlation) and its
    x-means and weights replaced so that both share the first joint's
    x-marginal.  Given x and the component, y and y' are independent.
    """
    a = sample_gmm_spec(K, 2, rng, n_components=K)
    b = sample_gmm_spec(K, 2, rng, n_components=K)
    means = np.column_stack([a.means[:, 0], a.means[:, 1], b.means[:, 1]])
    covs = np.empty((K, 3, 3))
    for k in range(K):
        sxx = a.covs[k, 0, 0]
        c1 = a.covs[k, 0, 1]
        c2 = b.covs[k, 0, 1] * math.sqrt(sxx / b.covs[k, 0, 0])
        covs[k] = [[sxx, c1, c2],
                   [c1, a.covs[k, 1, 1], c1 * c2 / sxx],
                   [c2, c1 * c2 / sxx, b.covs[k, 1, 1]]]
    return GmmSpec(a.weights, means, covs)


def sample_triplet(K: int, T: int, rng: np.random.Generator, n_mci: int = 200_000,
                   max_tries: int = 1000) -> Triplet:
    """Draw ``(x, y, y')`` sharing one x-sequence (see :func:`shared_x_spec`).

    Candidates whose two pair-wise MI values are not separated by more than two
    combined Monte-Carlo standard errors are redrawn.
    """
    for _ in range(max_tries):
        seed = int(rng.integers(0, 2**63 - 1))
        sub = np.random.default_rng(seed)
        spec = shared_x_spec(K, sub)
        a = mci_mi(spec, n_mci, sub, axes=(0, 1))
        b = mci_mi(spec, n_mci, sub, axes=(0, 2))
        if abs(a.mi_nats - b.mi_nats) <= 2 * (a.stderr + b.stderr):
            continue
        z = sample_gmm(spec, T, sub)
        return Triplet(z[:, 0], z[:, 1], z[:, 2], a.mi_nats, b.mi_nats, a.stderr, b.stderr, K, seed)
    raise RuntimeError(f"could not draw an unambiguous triplet for K={K} in {max_tries} tries")


def gen_triplets(count: int, K: int, T: int, seed: int, n_mci: int = 200_000) -> list[Triplet]:
    rng = np.random.default_rng([seed, K])
    return [sample_triplet(K, T, rng, n_mci) for _ in range(count)]


def order_accuracy(triplets: Sequence[Triplet], estimator: NamedEstimator) -> tuple[float, np.ndarray, np.ndarray]:
    """Fraction of triplets ordered correctly (ties count as wrong)."""
    seqs = [t.pair(0) for t in triplets] + [t.pair(1) for t in triplets]
    seeds = [t.seed % (2**31) for t in triplets] * 2
    est = estimator.many(seqs, seeds)
    n = len(triplets)
    a, b = est[:n], est[n:]
    labels = np.array([t.label for t in triplets])
    correct = np.where(labels == 1, a > b, b > a)
    return float(np.mean(correct)), a, b


def order_accuracy_suite(estimators: Sequence[NamedEstimator], Ks: Sequence[int],
                         triplets_per_K: int, T: int, seed: int = 0,
                         n_mci: int = 200_000,
                         triplets: dict[int, list[Triplet]] | None = None) -> SuiteReport:
    """Order accuracy per K; every estimator sees the same triplets."""
    rep = SuiteReport("order", seed, [e.name for e in estimators])
    acc: dict[str, dict[str, float]] = {e.name: {} for e in estimators}
    for K in Ks:
        trip = triplets[K] if triplets and K in triplets else gen_triplets(triplets_per_K, K, T, seed, n_mci)
        for est in estimators:
            (a_val, a, b), dt = _timed(order_accuracy, trip, est)
            acc[est.name][str(K)] = a_val
            per = dt / (2 * len(trip))
            for i, t in enumerate(trip):
                rep.records.append(EvalRecord(est.name, f"trip_K{K}_{i:04d}_xy", t.gt_xy, float(a[i]), per, t.seed))
                rep.records.append(EvalRecord(est.name, f"trip_K{K}_{i:04d}_xy2", t.gt_xy2, float(b[i]), per, t.seed))
    rep.summary = {"T": T, "triplets_per_K": triplets_per_K, "Ks": list(Ks), "accuracy": acc}
    return rep


# ----------------------------------------------------------------------------
# independence testing

def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 1/2 P(equal)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0/1")
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("roc_auc needs both positive and negative labels")
    diff = pos[:, None] - neg[None, :]
    return float((np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / diff.size)


@dataclass
class SlicedScorer:
    """Sliced-MI dependence score built from a scalar estimator."""

    estimator: NamedEstimator
    m: int = INDEPENDENCE_SLICES
    needs_truth = False

    @property
    def name(self) -> str:
        return f"sliced-{self.estimator.name}"

    def __call__(self, X, Y, seed: int) -> float:
        est = self.estimator
        scalar = _SliceAdapter(est)
        return float(np.mean(slice_estimates(scalar, X, Y, self.m, np.random.default_rng(seed))))


class _SliceAdapter:
    def __init__(self, est: NamedEstimator):
        self._est = est
        self.batch = est.batch

    def __call__(self, seq, seed):
        return self._est(seq, seed)


@dataclass
class OracleSlicedMI:
    """Exact sliced MI of the Gaussian constructions, from their covariances.

    For unit-variance projections ``phi^T X`` and ``psi^T Y`` the pair is
    bivariate Gaussian with correlation ``phi^T C psi / sqrt(psi^T S psi)``
    (``C = Cov(X, Y)``, ``S = Cov(Y)``, ``Cov(X) = I``).
    """

    kind: str
    m: int = INDEPENDENCE_SLICES
    needs_truth = True

    @property
    def name(self) -> str:
        return "oracle"

    def __call__(self, X, Y, seed: int, dependent: bool) -> float:
        d = X.shape[1]
        C, S = highdim_covariances(self.kind, d, dependent)
        proj = sample_projections(self.m, d, Y.shape[1], np.random.default_rng(seed))
        num = np.einsum("mi,ij,mj->m", proj.dirs_x, C, proj.dirs_y)
        den = np.sqrt(np.einsum("mi,ij,mj->m", proj.dirs_y, S, proj.dirs_y))
        rho = num / den
        return float(np.mean(-0.5 * np.log1p(-rho * rho)))


def independence_auc_suite(kind: str, d_list: Sequence[int], n_list: Sequence[int], scorer,
                           trials: int = 10, pairs_per_trial: int = 100, seed: int = 0) -> SuiteReport:
    """Mean AUC over trials of sliced-MI scores against dependence labels.

    Each trial holds ``pairs_per_trial`` pairs, half dependent and half
    independent.
    """
    if pairs_per_trial < 2 or pairs_per_trial % 2:
        raise ValueError("pairs_per_trial must be an even number >= 2")
    name = getattr(scorer, "name", "scorer")
    rep = SuiteReport("indep", seed, [name])
    curves = []
    for d in d_list:
        for n in n_list:
            aucs = []
            for trial in range(trials):
                labels = np.array([1, 0] * (pairs_per_trial // 2))
                scores = np.empty(pairs_per_trial)
                for p, dep in enumerate(labels):
                    item_seed = int(np.random.default_rng([seed, d, n, trial, p]).integers(0, 2**31 - 1))
                    X, Y = gen_highdim_pair(kind, d, n, bool(dep), np.random.default_rng(item_seed))
                    args = (X, Y, item_seed, bool(dep)) if getattr(scorer, "needs_truth", False) else (X, Y, item_seed)
                    scores[p], dt = _timed(scorer, *args)
                    rep.records.append(EvalRecord(name, f"{kind}_d{d}_n{n}_t{trial}_p{p}_dep{int(dep)}",
                                                  float("nan"), float(scores[p]), dt, item_seed))
                aucs.append(roc_auc(scores, labels))
            curves.append({"d": d, "n": n, "mean_auc": float(np.mean(aucs)), "aucs": aucs})
    rep.summary = {"kind": kind, "trials": trials, "pairs_per_trial": pairs_per_trial, "curves": curves}
    return rep


# ----------------------------------------------------------------------------
# timing

def timing_suite(estimators: Sequence[NamedEstimator], lengths: Sequence[int] = DEFAULT_TIMING_LENGTHS,
                 repeats: int = 100, batch_size: int = 16, seed: int = 0) -> SuiteReport:
    """Mean wall time per estimate; estimators with a batched form also get a
    ``<name>-<batch_size>`` row timing whole batches divided per item.

    Only the estimate call is timed, not the data generation.
    """
    rep = SuiteReport("timing", seed, [e.name for e in estimators])
    rows = []
    with threadpool_limits(limits=1):
        _timing_rows(rep, rows, estimators, lengths, repeats, batch_size, seed)
    rep.summary = {"rows": rows, "batch_size": batch_size}
    return rep


def _timing_rows(rep, rows, estimators, lengths, repeats, batch_size, seed):
    for T in lengths:
        rng = np.random.default_rng([seed, T])
        rhos = rng.uniform(-0.9, 0.9, repeats)
        seqs = [sample_joint(gaussian_spec(float(r)), T, rng) for r in rhos]
        for est in estimators:
            times = []
            for i, s in enumerate(seqs):
                v, dt = _timed(est, s, i)
                times.append(dt)
                rep.records.append(EvalRecord(est.name, f"timing_T{T}_{i:03d}",
                                              gaussian_mi_analytic(rhos[i]).mi_nats, v, dt, i))
            rows.append({"estimator": est.name, "T": T, "mean_seconds": float(np.mean(times)),
                         "per_item_seconds": float(np.mean(times)), "repeats": repeats})
            if est.batch is not None:
                per_item = []
                n_batches = max(1, repeats // batch_size)
                for b in range(n_batches):
                    group = [seqs[(b * batch_size + j) % len(seqs)] for j in range(batch_size)]
                    _, dt = _timed(est.many, group, list(range(batch_size)))
                    per_item.append(dt / batch_size)
                rows.append({"estimator": f"{est.name}-{batch_size}", "T": T,
                             "mean_seconds": float(np.mean(per_item)) * batch_size,
                             "per_item_seconds": float(np.mean(per_item)), "repeats": n_batches})


def summary_rows_csv(rows: Sequence[dict], path) -> Path:
    """Write a list of flat dicts (e.g. the timing table) as CSV."""
    path = Path(path)
    keys = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
    return path
