"""Latent-query attention network that maps a ranked sequence to a table."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from ..autodiff import ParamStore, Tensor, no_grad, ops
from ..copula import RankedSequence, empirical_copula
from ..dvcore import DiscriminantTable, dv_value, shuffle_marginal, stack_ranked
from ..simdist import JointSequence


def default_smoothing(L: int) -> tuple[int, float]:
    """Gaussian-blur size/width scaled from (15, 3.0) at L = 256."""
    k = max(3, int(round(15 * L / 256)))
    if k % 2 == 0:
        k += 1
    return k, 3.0 * L / 256


@dataclass(frozen=True)
class InfoNetConfig:
    L: int = 32
    d_model: int = 64
    n_latents: int = 64
    n_cross: int = 2
    n_self: int = 2
    n_heads: int = 4
    fourier_bands: int = 8
    mlp_ratio: int = 4
    smooth_ksize: int | None = None
    smooth_sigma: float | None = None

    def __post_init__(self):
        k, s = default_smoothing(self.L)
        if self.smooth_ksize is None:
            object.__setattr__(self, "smooth_ksize", k)
        if self.smooth_sigma is None:
            object.__setattr__(self, "smooth_sigma", s)
        if self.L < 2:
            raise ValueError(f"L must be >= 2, got {self.L}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.smooth_ksize % 2 == 0 or self.smooth_ksize > self.L:
            raise ValueError(f"smooth_ksize must be odd and <= L, got {self.smooth_ksize}")
        if self.smooth_sigma <= 0:
            raise ValueError("smooth_sigma must be positive")
        for name in ("d_model", "n_latents", "n_cross", "n_heads", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_self < 0 or self.fourier_bands < 0:
            raise ValueError("n_self and fourier_bands must be >= 0")

    @property
    def n_features(self) -> int:
        return 2 + 4 * self.fourier_bands

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "InfoNetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown InfoNet config keys: {sorted(unknown)}")
        return cls(**d)


def gaussian_kernel(ksize: int, sigma: float) -> np.ndarray:
    if ksize % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {ksize}")
    r = ksize // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def gaussian_blur_table(table, ksize: int, sigma: float):
    """Blur a table (or an ``(N, L, L)`` tensor) with a normalized Gaussian,
    replicate-padding the borders."""
    kernel = gaussian_kernel(ksize, sigma)
    if isinstance(table, Tensor):
        return ops.conv2d_fixed(table, kernel)
    values = table.values if isinstance(table, DiscriminantTable) else np.asarray(table)
    if ksize > values.shape[-1]:
        raise ValueError(f"kernel size {ksize} exceeds table size {values.shape[-1]}")
    out = ops.conv2d_fixed(Tensor(values[None]), kernel).data[0]
    return DiscriminantTable(out) if isinstance(table, DiscriminantTable) else out


def fourier_features(u: np.ndarray, v: np.ndarray, bands: int) -> np.ndarray:
    """``[u, v, sin/cos(pi 2^k u), sin/cos(pi 2^k v)]`` along a new last axis."""
    parts = [u[..., None], v[..., None]]
    if bands:
        freqs = np.pi * 2.0 ** np.arange(bands)
        for c in (u, v):
            ang = c[..., None] * freqs
            parts += [np.sin(ang), np.cos(ang)]
    return np.concatenate(parts, axis=-1)


def cell_centers(L: int) -> tuple[np.ndarray, np.ndarray]:
    c = (np.arange(L) + 0.5) / L
    cu, cv = np.meshgrid(c, c, indexing="ij")
    return cu.ravel(), cv.ravel()


class InfoNetModel:
    """Config plus parameters; :meth:`forward` is the whole estimator network."""

    def __init__(self, config: InfoNetConfig, params: ParamStore):
        self.config = config
        self.params = params
        self._kernel = gaussian_kernel(config.smooth_ksize, config.smooth_sigma)

    @classmethod
    def init(cls, config: InfoNetConfig, rng: np.random.Generator,
             dtype=np.float32) -> "InfoNetModel":
        ps = ParamStore()
        D, F = config.d_model, config.n_features
        H = config.mlp_ratio * D

        def dense(name, fan_in, fan_out, zero=False):
            w = np.zeros((fan_in, fan_out)) if zero else rng.normal(0, 1 / math.sqrt(fan_in), (fan_in, fan_out))
            ps.add(name + ".w", w.astype(dtype))
            ps.add(name + ".b", np.zeros(fan_out, dtype=dtype))

        def norm(name):
            ps.add(name + ".g", np.ones(D, dtype=dtype))
            ps.add(name + ".b", np.zeros(D, dtype=dtype))

        def attention(name):
            for p in ("q", "k", "v"):
                dense(f"{name}.{p}", D, D)
            w = rng.normal(0, 1 / math.sqrt(D), (D, D)) / math.sqrt(2 * (config.n_cross * (1 + config.n_self) + 1))
            ps.add(f"{name}.o.w", w.astype(dtype))
            ps.add(f"{name}.o.b", np.zeros(D, dtype=dtype))

        def mlp(name):
            dense(name + ".fc1", D, H)
            dense(name + ".fc2", H, D)

        dense("embed", F, D)
        ps.add("latents", rng.normal(0, 1.0, (config.n_latents, D)).astype(dtype))
        for c in range(config.n_cross):
            pre = f"cross{c}"
            norm(pre + ".ln_q")
            norm(pre + ".ln_kv")
            attention(pre + ".attn")
            norm(pre + ".ln_mlp")
            mlp(pre + ".mlp")
            for s in range(config.n_self):
                sp = f"{pre}.self{s}"
                norm(sp + ".ln_attn")
                attention(sp + ".attn")
                norm(sp + ".ln_mlp")
                mlp(sp + ".mlp")
        cu, cv = cell_centers(config.L)
        proj = rng.normal(0, 1 / math.sqrt(F), (F, D))
        ps.add("cells", (fourier_features(cu, cv, config.fourier_bands) @ proj).astype(dtype))
        norm("dec.ln_q")
        norm("dec.ln_kv")
        attention("dec.attn")
        norm("dec.ln_out")
        dense("head.fc1", D, D)
        dense("head.fc2", D, 1, zero=True)
        return cls(config, ps)

    @property
    def dtype(self):
        return self.params["embed.w"].dtype

    # -- building blocks ----------------------------------------------------

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def _ln(self, x: Tensor, name: str) -> Tensor:
        return ops.layer_norm(x, self._p(name + ".g"), self._p(name + ".b"))

    def _dense(self, x: Tensor, name: str) -> Tensor:
        return ops.add(ops.matmul(x, self._p(name + ".w")), self._p(name + ".b"))

    def _heads(self, x: Tensor, h: int) -> Tensor:
        N, S, D = x.shape
        if h == 1:
            return x
        return ops.transpose(ops.reshape(x, (N, S, h, D // h)), (0, 2, 1, 3))

    def _merge(self, x: Tensor) -> Tensor:
        if x.ndim == 3:
            return x
        N, h, S, dh = x.shape
        return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (N, S, h * dh))

    def _attend(self, q_in: Tensor, kv_in: Tensor, name: str, batch: int,
                heads: int = 1) -> Tensor:
        """Scaled dot-product attention; cross-attention runs single-headed."""
        dh = self.config.d_model // heads
        q = ops.scale(self._dense(q_in, name + ".q"), 1.0 / math.sqrt(dh))
        if q.ndim == 2:
            q = ops.broadcast_to(q, (batch,) + q.shape)
        k = self._heads(self._dense(kv_in, name + ".k"), heads)
        v = self._heads(self._dense(kv_in, name + ".v"), heads)
        q = self._heads(q, heads)
        scores = ops.matmul(q, ops.transpose(k))
        out = self._merge(ops.matmul(ops.softmax(scores), v))
        return self._dense(out, name + ".o")

    def _mlp(self, x: Tensor, name: str) -> Tensor:
        return self._dense(ops.gelu(self._dense(x, name + ".fc1")), name + ".fc2")

    # -- network -------------------------------------------------------------

    def encode_pairs(self, us: np.ndarray, vs: np.ndarray) -> Tensor:
        """Tokens ``(N, T, d_model)`` for ranked pairs ``(N, T)``."""
        feats = fourier_features(np.asarray(us), np.asarray(vs), self.config.fourier_bands)
        return self._dense(Tensor(feats.astype(self.dtype, copy=False)), "embed")

    def _encode(self, us: np.ndarray, vs: np.ndarray) -> Tensor:
        """Latent state ``(N, n_latents, d_model)`` after all encoder blocks."""
        cfg = self.config
        us = np.atleast_2d(us)
        vs = np.atleast_2d(vs)
        if us.shape != vs.shape or us.shape[1] < 2:
            raise ValueError(f"bad ranked batch shapes {us.shape}, {vs.shape}")
        N = us.shape[0]
        tokens = self.encode_pairs(us, vs)
        x = ops.broadcast_to(self._p("latents"), (N, cfg.n_latents, cfg.d_model))
        for c in range(cfg.n_cross):
            pre = f"cross{c}"
            kv = self._ln(tokens, pre + ".ln_kv")
            x = ops.add(x, self._attend(self._ln(x, pre + ".ln_q"), kv, pre + ".attn", N))
            x = ops.add(x, self._mlp(self._ln(x, pre + ".ln_mlp"), pre + ".mlp"))
            for s in range(cfg.n_self):
                sp = f"{pre}.self{s}"
                h = self._ln(x, sp + ".ln_attn")
                x = ops.add(x, self._attend(h, h, sp + ".attn", N, cfg.n_heads))
                x = ops.add(x, self._mlp(self._ln(x, sp + ".ln_mlp"), sp + ".mlp"))
        return x

    def forward_arrays(self, us: np.ndarray, vs: np.ndarray, smooth: bool = True) -> Tensor:
        """Tables ``(N, L, L)`` for a batch of ranked pairs ``us, vs (N, T)``."""
        cfg = self.config
        x = self._encode(us, vs)
        N = x.shape[0]
        cells = self._p("cells")
        kv = self._ln(x, "dec.ln_kv")
        y = self._attend(self._ln(cells, "dec.ln_q"), kv, "dec.attn", N)
        y = ops.add(y, cells)
        y = self._ln(y, "dec.ln_out")
        y = self._dense(ops.gelu(self._dense(y, "head.fc1")), "head.fc2")
        tables = ops.reshape(y, (N, cfg.L, cfg.L))
        if smooth:
            tables = ops.conv2d_fixed(tables, self._kernel.astype(self.dtype))
        return tables

    def infer_arrays(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        """Inference-only equivalent of :meth:`forward_arrays` (smoothed).

        The decoder is rewritten without changing its value: the key bias
        shifts every score of a row equally and cancels in the softmax; since
        softmax rows sum to one, the value and output projections fold into a
        single map on the latents; the output norm's affine folds into the
        first head layer. Work is done in place on the ``(N, cells, d)``
        activations, which dominate the cost.
        """
        cfg = self.config
        P = {name: t.data for name, t in self.params}
        with no_grad():
            x = self._encode(us, vs).data
        N = x.shape[0]

        def ln(a, name=None):
            a -= a.mean(axis=-1, keepdims=True)
            a *= 1.0 / np.sqrt(np.einsum("...d,...d->...", a, a)[..., None] / a.shape[-1] + 1e-5)
            if name is not None:
                a *= P[name + ".g"]
                a += P[name + ".b"]
            return a

        cells = P["cells"]
        q = ln(cells.copy(), "dec.ln_q") @ P["dec.attn.q.w"] + P["dec.attn.q.b"]
        qk = (q @ P["dec.attn.k.w"].T) * (1.0 / math.sqrt(cfg.d_model))
        w_vo = P["dec.attn.v.w"] @ P["dec.attn.o.w"]
        b_vo = P["dec.attn.v.b"] @ P["dec.attn.o.w"] + P["dec.attn.o.b"] + cells
        w1 = P["dec.ln_out.g"][:, None] * P["head.fc1.w"]
        b1 = P["dec.ln_out.b"] @ P["head.fc1.w"] + P["head.fc1.b"]
        w2 = 0.5 * P["head.fc2.w"][:, 0]

        kv = ln(x.copy(), "dec.ln_kv")                      # (N, S, D)
        vo = kv @ w_vo                                       # (N, S, D)
        s = np.matmul(qk, np.swapaxes(kv, 1, 2))             # (N, C, S)
        bound = np.linalg.norm(qk, axis=1).max() * np.linalg.norm(kv, axis=2).max()
        if bound > 60.0:  # exp could overflow float32; shift by the row max
            s -= s.max(axis=-1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=-1, keepdims=True)
        y = np.matmul(s, vo)                                 # (N, C, D)
        del s
        y += b_vo
        h = ln(y) @ w1
        h += b1
        # tanh-approximated GELU, its factor 1/2 folded into w2
        t = h * h
        t *= 0.044715
        t += 1.0
        t *= h
        t *= math.sqrt(2.0 / math.pi)
        np.tanh(t, out=t)
        t += 1.0
        t *= h
        out = t @ w2 + P["head.fc2.b"][0]
        with no_grad():
            return ops.conv2d_fixed(Tensor(out.reshape(N, cfg.L, cfg.L)), self._kernel.astype(self.dtype)).data

    def forward(self, seq: RankedSequence) -> DiscriminantTable:
        t = self.infer_arrays(seq.us[None], seq.vs[None])
        return DiscriminantTable(t[0].astype(np.float64))

    def forward_batch(self, seqs: Sequence[RankedSequence]) -> list[DiscriminantTable]:
        us, vs = stack_ranked(seqs)
        return [DiscriminantTable(v.astype(np.float64)) for v in self.infer_arrays(us, vs)]


def _item_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def estimate_mi(model: InfoNetModel, seq: JointSequence, seed=0,
                n_shuffles: int = 1) -> float:
    """MI estimate in nats: copula, one forward pass, DV value.

    ``seed`` (int or Generator) drives the marginal shuffle(s).
    """
    ranked = empirical_copula(seq)
    table = model.forward(ranked)
    rng = _item_rng(seed)
    vals = [dv_value(table, ranked, shuffle_marginal(ranked.vs, rng)) for _ in range(n_shuffles)]
    return float(np.mean(vals))


def estimate_mi_batch(model: InfoNetModel, seqs: Sequence[JointSequence], seeds=None,
                      n_shuffles: int = 1, chunk: int = 64) -> np.ndarray:
    """Batched :func:`estimate_mi`; item ``i`` uses ``seeds[i]`` for its shuffle.

    Sequences of different lengths are grouped by length internally.
    """
    seqs = list(seqs)
    if seeds is None:
        seeds = list(range(len(seqs)))
    if len(seeds) != len(seqs):
        raise ValueError("need one seed per sequence")
    ranked = [empirical_copula(s) for s in seqs]
    out = np.empty(len(seqs))
    by_len: dict[int, list[int]] = {}
    for i, r in enumerate(ranked):
        by_len.setdefault(len(r), []).append(i)
    for idxs in by_len.values():
        for start in range(0, len(idxs), chunk):
            part = idxs[start:start + chunk]
            tables = model.forward_batch([ranked[i] for i in part])
            for i, table in zip(part, tables):
                rng = _item_rng(seeds[i])
                vals = [dv_value(table, ranked[i], shuffle_marginal(ranked[i].vs, rng))
                        for _ in range(n_shuffles)]
                out[i] = np.mean(vals)
    return out
