"""Amortized training on freshly simulated Gaussian mixtures."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..autodiff import AdamState, adam_step, backward, clip_grad_norm
from ..copula import empirical_copula
from ..dvcore import mi_loss_batch
from ..simdist import sample_gmm_spec, sample_joint
from .model import InfoNetConfig, InfoNetModel

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_n: int = 32
    T: int = 2000
    steps: int = 20_000
    lr: float = 3e-4
    seed: int = 0
    max_components: int = 20
    warmup_steps: int = 200
    min_lr_ratio: float = 0.05
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_n < 1 or self.T < 2:
            raise ValueError("batch_n must be >= 1 and T >= 2")
        if not self.lr > 0:
            raise ValueError("lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup followed by cosine decay to ``min_lr_ratio * lr``."""
    if step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    span = max(1, cfg.steps - cfg.warmup_steps)
    frac = min(1.0, (step - cfg.warmup_steps) / span)
    floor = cfg.min_lr_ratio
    return cfg.lr * (floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * frac)))


def simulate_batch(cfg: TrainConfig, step: int):
    """The ranked training sequences for one step (pure in ``(seed, step)``)."""
    rng = np.random.default_rng([cfg.seed, step])
    seqs = []
    for _ in range(cfg.batch_n):
        spec = sample_gmm_spec(cfg.max_components, 2, rng)
        seqs.append(empirical_copula(sample_joint(spec, cfg.T, rng)))
    return seqs, rng


@dataclass
class TrainLogRow:
    step: int
    loss: float
    lr: float
    grad_norm: float
    wall_time: float


def train(config: InfoNetConfig, train_cfg: TrainConfig, model: InfoNetModel | None = None,
          callback=None, log_every: int = 50) -> tuple[InfoNetModel, list[TrainLogRow]]:
    """Gradient ascent of the batched DV objective.

    Each step draws ``batch_n`` new mixtures, samples ``T`` pairs from each,
    rank-transforms them, predicts tables and ascends the mean DV value with
    Adam.  ``callback(step, model, row)`` runs after every update.
    """
    if model is None:
        model = InfoNetModel.init(config, np.random.default_rng([train_cfg.seed, 2**31]))
    state = AdamState()
    rows: list[TrainLogRow] = []
    t0 = time.perf_counter()
    for step in range(train_cfg.steps):
        seqs, rng = simulate_batch(train_cfg, step)
        us = np.stack([s.us for s in seqs])
        vs = np.stack([s.vs for s in seqs])
        model.params.zero_grad()
        tables = model.forward_arrays(us, vs)
        loss = mi_loss_batch(tables, seqs, rng)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss at step {step} (seed {train_cfg.seed})")
        backward(loss)
        gnorm = clip_grad_norm(model.params, train_cfg.clip_norm) if train_cfg.clip_norm else float("nan")
        lr = lr_at(step, train_cfg)
        adam_step(model.params, state, lr, maximize=True)
        row = TrainLogRow(step, value, lr, gnorm, time.perf_counter() - t0)
        rows.append(row)
        if log_every and (step % log_every == 0 or step == train_cfg.steps - 1):
            log.info("step %d loss %.4f lr %.2e |g| %.3f %.1fs", step, value, lr, gnorm, row.wall_time)
        if callback is not None:
            callback(step, model, row)
    return model, rows
