"""Temporal pooling layers mapping ``(batch, frames, dim)`` activations to
fixed-length utterance vectors.

Five kinds are provided:

* ``ST``  statistics pooling: mean and standard deviation over frames.
* ``AT``  attentive statistics: weighted mean/std with weights
  ``softmax_t(v . tanh(W h_t + b))``.
* ``MH``  multi-head attention: the feature vector is split into ``heads``
  sub-vectors, each with its own attention and weighted mean/std.
* ``MRH`` multi-resolution multi-head: MH evaluated at several softmax
  temperatures (scores divided by tau), results concatenated.
* ``LDE`` learnable dictionary encoding: soft assignment of each frame to
  ``dict_size`` centres with ``softmax_c(-s_c ||h_t - mu_c||^2)`` and
  averaged residuals per centre.

All five are invariant to the order of frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, InvalidConfig, ShapeMismatch
from .nn.layers import Module

VAR_EPS = 1e-10
LDE_EPS = 1e-9
KINDS = ("ST", "AT", "LDE", "MH", "MRH")


@dataclass(frozen=True)
class PoolingConfig:
    kind: str = "MH"
    input_dim: int = 64
    heads: int = 4
    dict_size: int = 8
    attention_hidden: int = 32
    resolutions: tuple[float, ...] = (0.5, 1.0, 2.0)

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.upper())
        object.__setattr__(self, "resolutions", tuple(float(r) for r in self.resolutions))
        if self.kind not in KINDS:
            raise InvalidConfig(f"unknown pooling kind {self.kind!r}")
        if self.input_dim < 1:
            raise InvalidConfig("pooling input_dim must be >= 1")
        if self.kind in ("MH", "MRH") and (self.heads < 1 or self.input_dim % self.heads):
            raise InvalidConfig(f"input_dim {self.input_dim} not divisible by {self.heads} heads")
        if self.kind == "LDE" and self.dict_size < 1:
            raise InvalidConfig("dict_size must be >= 1")
        if self.kind in ("AT", "MH", "MRH") and self.attention_hidden < 1:
            raise InvalidConfig("attention_hidden must be >= 1")
        if self.kind == "MRH" and (not self.resolutions or min(self.resolutions) <= 0):
            raise InvalidConfig("MRH temperatures must be positive")

    @property
    def output_dim(self) -> int:
        d = self.input_dim
        if self.kind == "LDE":
            return self.dict_size * d
        if self.kind == "MRH":
            return 2 * d * len(self.resolutions)
        return 2 * d


@dataclass(frozen=True, eq=False)
class PooledVector:
    values: np.ndarray
    provenance: PoolingConfig = field(default_factory=PoolingConfig)


def _check_input(h: np.ndarray, dim: int) -> None:
    if h.ndim != 3:
        raise ShapeMismatch(f"pooling expects (batch, frames, dim), got {h.shape}")
    if h.shape[1] < 1:
        raise EmptyInput("pooling needs at least one frame")
    if h.shape[2] != dim:
        raise ShapeMismatch(f"pooling expects dim {dim}, got {h.shape[2]}")


def weighted_stats(h: np.ndarray, w: np.ndarray):
    """Weighted mean and std over axis 1; ``w`` broadcasts over the last axis."""
    wb = w[..., None]
    mu = np.sum(wb * h, axis=1)
    centred = h - mu[:, None]
    var = np.sum(wb * centred * centred, axis=1)
    clamped = np.maximum(var, 0.0)
    std = np.sqrt(clamped + VAR_EPS)
    return mu, std, (h, w, centred, std, var > 0)


def weighted_stats_backward(cache, g_mu: np.ndarray, g_std: np.ndarray):
    h, w, centred, std, active = cache
    g_var = np.where(active, g_std / (2 * std), 0.0)
    wb = w[..., None]
    # sum_t w_t (h_t - mu) = 0, so the mean's own dependence drops out of var
    g_h = wb * (g_mu[:, None] + 2 * g_var[:, None] * centred)
    g_w = np.sum(g_mu[:, None] * h + g_var[:, None] * centred * centred, axis=-1)
    return g_h, g_w


def softmax(x: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(y: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    return y * (g - np.sum(g * y, axis=axis, keepdims=True))


class StatsPooling(Module):
    def __init__(self, cfg: PoolingConfig):
        super().__init__()
        self.cfg = cfg

    def forward(self, h, train=False):
        _check_input(h, self.cfg.input_dim)
        b, t, _ = h.shape
        w = np.full((b, t), 1.0 / t, dtype=h.dtype)
        mu, std, cache = weighted_stats(h, w)
        self._cache = cache
        return np.concatenate([mu, std], axis=1)

    def backward(self, grad):
        cache = self._cached()
        d = self.cfg.input_dim
        g_h, _ = weighted_stats_backward(cache, grad[:, :d], grad[:, d:])
        return g_h


class AttentivePooling(Module):
    """Multi-head attentive statistics; covers AT (one head), MH and MRH."""

    def __init__(self, cfg: PoolingConfig, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.heads = 1 if cfg.kind == "AT" else cfg.heads
        self.temperatures = cfg.resolutions if cfg.kind == "MRH" else (1.0,)
        dh, a = cfg.input_dim // self.heads, cfg.attention_hidden
        bound = np.sqrt(6.0 / dh)
        self.params["W"] = rng.uniform(-bound, bound, size=(self.heads, a, dh))
        self.params["b"] = np.zeros((self.heads, a))
        self.params["v"] = rng.uniform(-np.sqrt(6.0 / a), np.sqrt(6.0 / a), size=(self.heads, a))
        self.last_weights: list[np.ndarray] = []

    def forward(self, h, train=False):
        _check_input(h, self.cfg.input_dim)
        b, t, d = h.shape
        hs = h.reshape(b, t, self.heads, d // self.heads)
        u = np.tanh(np.einsum("bthd,had->btha", hs, self.params["W"]) + self.params["b"])
        scores = np.einsum("btha,ha->bth", u, self.params["v"])
        outs, caches, self.last_weights = [], [], []
        for tau in self.temperatures:
            w = softmax(scores / tau, axis=1)
            mu, std, cache = weighted_stats(hs, w)
            outs.append(np.stack([mu, std], axis=2).reshape(b, 2 * d))
            caches.append((w, cache))
            self.last_weights.append(w)
        self._cache = (hs, u, caches)
        return np.concatenate(outs, axis=1)

    def backward(self, grad):
        hs, u, caches = self._cached()
        b, t, nh, dh = hs.shape
        d = nh * dh
        g_hs = np.zeros_like(hs)
        g_scores = np.zeros((b, t, nh), dtype=hs.dtype)
        for i, (tau, (w, cache)) in enumerate(zip(self.temperatures, caches)):
            g = grad[:, 2 * d * i:2 * d * (i + 1)].reshape(b, nh, 2, dh)
            gh, gw = weighted_stats_backward(cache, g[:, :, 0], g[:, :, 1])
            g_hs += gh
            g_scores += softmax_backward(w, gw, axis=1) / tau
        W, v = self.params["W"], self.params["v"]
        self.grads["v"] = np.einsum("bth,btha->ha", g_scores, u)
        g_pre = g_scores[..., None] * v * (1 - u * u)
        self.grads["W"] = np.einsum("btha,bthd->had", g_pre, hs)
        self.grads["b"] = g_pre.sum(axis=(0, 1))
        g_hs += np.einsum("btha,had->bthd", g_pre, W)
        return g_hs.reshape(b, t, d)


class DictionaryPooling(Module):
    """Learnable dictionary encoding (LDE)."""

    def __init__(self, cfg: PoolingConfig, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.params["centers"] = rng.uniform(-1.0, 1.0, size=(cfg.dict_size, cfg.input_dim))
        self.params["scales"] = np.full(cfg.dict_size, 1.0 / cfg.input_dim)
        self.last_assignments: np.ndarray | None = None

    def forward(self, h, train=False):
        _check_input(h, self.cfg.input_dim)
        b = h.shape[0]
        r = h[:, :, None, :] - self.params["centers"]  # (B, T, C, D)
        sq = np.sum(r * r, axis=-1)
        w = softmax(-self.params["scales"] * sq, axis=2)
        num = np.einsum("btc,btcd->bcd", w, r)
        den = w.sum(axis=1) + LDE_EPS
        e = num / den[..., None]
        self.last_assignments = w
        self._cache = (r, sq, w, den, e)
        return e.reshape(b, -1)

    def backward(self, grad):
        r, sq, w, den, e = self._cached()
        b, t, c, d = r.shape
        ge = grad.reshape(b, c, d)
        g_num = ge / den[..., None]
        g_den = -np.sum(ge * e, axis=-1) / den
        g_w = np.einsum("bcd,btcd->btc", g_num, r) + g_den[:, None, :]
        g_r = w[..., None] * g_num[:, None]
        g_logit = softmax_backward(w, g_w, axis=2)
        s = self.params["scales"]
        self.grads["scales"] = -np.sum(g_logit * sq, axis=(0, 1))
        g_r += (g_logit * -s)[..., None] * 2 * r
        self.grads["centers"] = -g_r.sum(axis=(0, 1))
        return g_r.sum(axis=2)


def build_pooling(cfg: PoolingConfig, rng: np.random.Generator | None = None) -> Module:
    if cfg.kind == "ST":
        return StatsPooling(cfg)
    if cfg.kind == "LDE":
        return DictionaryPooling(cfg, rng)
    return AttentivePooling(cfg, rng)


def pool(cfg: PoolingConfig, frames: np.ndarray, params: dict[str, np.ndarray] | None = None,
         train: bool = False) -> PooledVector:
    """Pool one utterance's ``frames x dim`` matrix."""
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise ShapeMismatch(f"expected frames x dim, got {frames.shape}")
    layer = build_pooling(cfg)
    if params is not None:
        layer.load_state_dict(params)
    layer.astype(frames.dtype)
    return PooledVector(layer.forward(frames[None], train)[0], cfg)
