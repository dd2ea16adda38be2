"""Command-line entry point: ``infonet-mi {gen-data,train,estimate,benchmark}``.

Exit codes: 0 success, 2 usage error, 1 runtime failure.  Every command
writes a ``run.json`` with its fully resolved arguments.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from contextlib import nullcontext
from dataclasses import fields
from importlib import metadata
from pathlib import Path

import numpy as np

from . import evalbench as eb
from .infonet.checkpoint import FORMAT_VERSION as CHECKPOINT_VERSION
from .simdist import DATASET_FORMAT_VERSION, JointSequence

FULL_SCALE = {"triplets": 2000, "sanity_seeds": 100}
DESK_SCALE = {"triplets": 200, "sanity_seeds": 50}


class UsageError(Exception):
    pass


def _version() -> str:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return (f"infonet-mi {pkg} (checkpoint format {CHECKPOINT_VERSION}, dataset format "
            f"{DATASET_FORMAT_VERSION}, report schema {eb.REPORT_SCHEMA_VERSION})")


def _write_run_json(directory: Path, command: str, resolved: dict) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "run.json"
    doc = {"command": command, "version": _version(), "config": resolved}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from exc


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from exc


# ----------------------------------------------------------------------------
# gen-data

def cmd_gen_data(args) -> int:
    from .simdist import GenerationError, gen_leveled_eval_set, leveled_entries, write_dataset

    out = Path(args.out)
    resolved = {"out": str(out), "levels": args.levels, "tol": args.tol, "per_level": args.per_level,
                "T": args.T, "seed": args.seed, "n_mci": args.n_mci, "rejection_cap": args.rejection_cap}
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise RuntimeError(f"output directory {out} is not writable: {exc}") from exc
    try:
        recs = gen_leveled_eval_set(args.levels, args.tol, args.per_level, args.T,
                                    np.random.default_rng(args.seed), n_mci=args.n_mci,
                                    rejection_cap=args.rejection_cap)
    except GenerationError as exc:
        raise RuntimeError(str(exc)) from exc
    write_dataset(out, leveled_entries(recs),
                  extra={"levels": sorted(args.levels), "tol": args.tol, "seed": args.seed})
    _write_run_json(out, "gen-data", resolved)
    print(f"wrote {len(recs)} sequences to {out}")
    return 0


# ----------------------------------------------------------------------------
# train

def _load_train_config(path: str | None, args):
    from .infonet.model import InfoNetConfig
    from .infonet.training import TrainConfig

    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        unknown = set(doc) - {"model", "train"}
        if unknown:
            raise UsageError(f"unknown config sections: {sorted(unknown)} (allowed: model, train)")
    tdoc = dict(doc.get("train", {}))
    if args.steps is not None:
        tdoc["steps"] = args.steps
    if args.seed is not None:
        tdoc["seed"] = args.seed
    try:
        return InfoNetConfig.from_dict(doc.get("model", {})), TrainConfig.from_dict(tdoc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc


def cmd_train(args) -> int:
    from .infonet.checkpoint import save_checkpoint
    from .infonet.training import TrainingError, train

    if args.resume:
        raise UsageError("--resume is not supported: training always starts from a fresh "
                         "initialization (resumption is out of scope)")
    model_cfg, train_cfg = _load_train_config(args.config, args)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_name(out.stem + "_log.csv")
    resolved = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "out": str(out),
                "log": str(log_path)}
    _write_run_json(out.parent, "train", resolved)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in fields(_row_type())])

        def on_step(step, model, row):
            w.writerow([row.step, repr(row.loss), repr(row.lr), repr(row.grad_norm), repr(row.wall_time)])
            if args.checkpoint_every and (step + 1) % args.checkpoint_every == 0:
                fh.flush()
                save_checkpoint(model, out)

        try:
            model, rows = train(model_cfg, train_cfg, callback=on_step, log_every=args.log_every)
        except TrainingError as exc:
            raise RuntimeError(str(exc)) from exc
    save_checkpoint(model, out)
    print(f"trained {len(rows)} steps; final loss {rows[-1].loss:.4f}; checkpoint {out}; log {log_path}")
    return 0


def _row_type():
    from .infonet.training import TrainLogRow
    return TrainLogRow


# ----------------------------------------------------------------------------
# estimate

def read_input(path: Path) -> list[tuple[str, JointSequence]]:
    """A dataset directory, one interleaved little-endian f64 file, or
    two-column whitespace-separated text."""
    from .simdist import read_dataset, read_sequence

    if path.is_dir():
        _, items = read_dataset(path)
        return [(e.id, s) for e, s in items]
    if not path.is_file():
        raise RuntimeError(f"input {path} does not exist")
    if path.suffix == ".bin":
        return [(path.stem, read_sequence(path))]
    try:
        data = np.loadtxt(path, ndmin=2)
    except ValueError as exc:
        raise RuntimeError(f"malformed text input {path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != 2:
        raise RuntimeError(f"malformed text input {path}: expected two columns, got shape {data.shape}")
    return [(path.stem, JointSequence(data[:, 0], data[:, 1]))]


def _build_estimator(args, name: str, model=None) -> eb.NamedEstimator:
    copula = None if args.copula is None else args.copula == "on"
    return eb.make_estimator(name, model=model, k=args.k, mine_iters=args.iters,
                             mine_batch=args.mine_batch, copula=copula)


def cmd_estimate(args) -> int:
    if args.method == "infonet" and not args.model:
        raise UsageError("--method infonet requires --model PATH")
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    _write_run_json(Path(args.out), "estimate", resolved)
    model = None
    if args.method == "infonet":
        from .infonet.checkpoint import load_checkpoint
        model = load_checkpoint(args.model)
    try:
        est = _build_estimator(args, args.method, model)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    items = read_input(Path(args.input))
    scale = 1.0 / math.log(2) if args.bits else 1.0
    unit = "bits" if args.bits else "nats"
    if len(items) == 1:
        (name, seq), = items
        t0 = time.perf_counter()
        v = est(seq, args.seed)
        dt = time.perf_counter() - t0
        print(f"{v * scale:.6f} {unit}  ({dt:.4f} s)")
        return 0
    chunk = max(1, args.batch)
    for start in range(0, len(items), chunk):
        part = items[start:start + chunk]
        t0 = time.perf_counter()
        vals = est.many([s for _, s in part], [args.seed + start + i for i in range(len(part))])
        dt = (time.perf_counter() - t0) / len(part)
        for (name, _), v in zip(part, vals):
            print(f"{name}\t{v * scale:.6f} {unit}\t{dt:.4f} s")
    return 0


# ----------------------------------------------------------------------------
# benchmark

SUITES = ("sanity", "bins", "order", "indep", "timing")


def cmd_benchmark(args) -> int:
    from threadpoolctl import threadpool_limits

    scale = FULL_SCALE if args.paper_scale else DESK_SCALE
    names = [n.strip() for n in args.estimators.split(",") if n.strip()]
    unknown = [n for n in names if n not in eb.ESTIMATOR_NAMES]
    if unknown or not names:
        raise UsageError(f"unknown estimator(s) {unknown}; choose from {', '.join(eb.ESTIMATOR_NAMES)}")
    missing = []
    if "infonet" in names and not args.model:
        missing.append("--model (trained InfoNet checkpoint, needed by the infonet estimator)")
    if args.suite == "bins" and not args.dataset:
        missing.append("--dataset (directory written by gen-data)")
    if args.suite == "indep" and len(names) != 1:
        missing.append("exactly one estimator for the indep suite (it is wrapped in sliced MI)")
    if missing:
        raise UsageError("missing prerequisites:\n  " + "\n  ".join(missing))
    model = None
    if args.model:
        from .infonet.checkpoint import load_checkpoint
        model = load_checkpoint(args.model)
    ests = []
    for n in names:
        mine_batch = 500 if (n == "mine" and args.suite == "sanity") else args.mine_batch
        copula = None if args.copula is None else args.copula == "on"
        ests.append(eb.make_estimator(n, model=model, k=args.k, mine_iters=args.iters,
                                      mine_batch=mine_batch, copula=copula))
    out = Path(args.out)
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    resolved["scale"] = scale
    _write_run_json(out, "benchmark", resolved)
    ctx = threadpool_limits(limits=args.threads) if args.threads else nullcontext()
    with ctx:
        if args.suite == "sanity":
            seeds = [args.seed + i for i in range(args.seeds or scale["sanity_seeds"])]
            rhos = args.rhos or list(eb.DEFAULT_SANITY_RHOS)
            rep = eb.sanity_gaussian_suite(ests, rhos, args.T, seeds)
        elif args.suite == "bins":
            from .simdist import read_dataset
            manifest, items = read_dataset(args.dataset)
            rep = eb.binned_error_suite(eb.bin_items_from_dataset(manifest, items), ests, seed=args.seed)
        elif args.suite == "order":
            rep = eb.order_accuracy_suite(ests, args.Ks, args.triplets or scale["triplets"], args.T,
                                          seed=args.seed, n_mci=args.n_mci)
        elif args.suite == "indep":
            scorer = eb.SlicedScorer(ests[0], m=args.m)
            rep = eb.independence_auc_suite(args.kind, args.d, args.n, scorer, trials=args.trials,
                                            pairs_per_trial=args.pairs, seed=args.seed)
        else:
            rep = eb.timing_suite(ests, args.lengths, repeats=args.repeats, seed=args.seed)
    csv_path, json_path = eb.write_report(rep, out)
    if args.suite == "timing":
        eb.summary_rows_csv(rep.summary["rows"], out / f"{eb.report_basename(rep)}_table.csv")
    print(f"wrote {csv_path} and {json_path}")
    return 0


# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="infonet-mi", description="Amortized mutual-information estimation toolkit.")
    p.add_argument("--version", action="version", version=_version())
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a leveled GMM evaluation dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--levels", type=_csv_floats, default=list(eb.DEFAULT_LEVELS))
    g.add_argument("--tol", type=float, default=0.02)
    g.add_argument("--per-level", type=int, default=50)
    g.add_argument("--T", type=int, default=2000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-mci", type=int, default=200_000)
    g.add_argument("--rejection-cap", type=int, default=1_000_000)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train an InfoNet model on simulated mixtures")
    t.add_argument("--config", help="JSON file with optional 'model' and 'train' sections")
    t.add_argument("--out", required=True, help="checkpoint path (.infonet)")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--log", help="training-log CSV (default: <out>_log.csv)")
    t.add_argument("--log-every", type=int, default=100)
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--resume", action="store_true", help=argparse.SUPPRESS)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("estimate", help="estimate MI for one sequence or a dataset")
    e.add_argument("--method", required=True, choices=eb.ESTIMATOR_NAMES)
    e.add_argument("--model")
    e.add_argument("--input", required=True, help="dataset dir, .bin sequence, or two-column text")
    e.add_argument("--k", type=int, default=5)
    e.add_argument("--iters", type=int, default=500)
    e.add_argument("--mine-batch", type=int, default=100)
    e.add_argument("--copula", choices=("on", "off"))
    e.add_argument("--batch", type=int, default=16, help="sequences per batched call")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--bits", action="store_true", help="report bits instead of nats")
    e.add_argument("--out", default=".", help="directory for run.json")
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("benchmark", help="run an evaluation suite")
    b.add_argument("--suite", required=True, choices=SUITES)
    b.add_argument("--estimators", default="ksg")
    b.add_argument("--out", required=True)
    b.add_argument("--paper-scale", action="store_true", help="full-size protocol counts (2000 triplets per K, 100 sanity seeds)")
    b.add_argument("--model")
    b.add_argument("--dataset")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--seeds", type=int, help="sanity: number of seeds")
    b.add_argument("--rhos", type=_csv_floats)
    b.add_argument("--T", type=int, default=2000)
    b.add_argument("--k", type=int, default=5)
    b.add_argument("--iters", type=int, default=500)
    b.add_argument("--mine-batch", type=int, default=100)
    b.add_argument("--copula", choices=("on", "off"))
    b.add_argument("--Ks", type=_csv_ints, default=[1, 5, 10])
    b.add_argument("--triplets", type=int, help="order: triplets per K")
    b.add_argument("--n-mci", type=int, default=200_000)
    b.add_argument("--kind", choices=("one_feature", "two_features", "indep_coords"), default="indep_coords")
    b.add_argument("--d", type=_csv_ints, default=[16])
    b.add_argument("--n", type=_csv_ints, default=[128])
    b.add_argument("--m", type=int, default=1000, help="indep: projections per pair")
    b.add_argument("--trials", type=int, default=10)
    b.add_argument("--pairs", type=int, default=100)
    b.add_argument("--lengths", type=_csv_ints, default=list(eb.DEFAULT_TIMING_LENGTHS))
    b.add_argument("--repeats", type=int, default=100)
    b.add_argument("--threads", type=int, default=0, help="cap BLAS threads (0 = leave as is)")
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report, do not dump a traceback
        print(f"{parser.prog} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
