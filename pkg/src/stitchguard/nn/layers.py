"""Layers with hand-written forward and backward passes.

Activations are channels-last: images are ``(batch, time, freq, channels)``
and vectors are ``(batch, features)``. Each module caches what its backward
pass needs during ``forward`` and writes parameter gradients into
``self.grads`` during ``backward``.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import BackwardBeforeForward, ShapeMismatch


class Module:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def children(self) -> list[tuple[str, "Module"]]:
        return [(k, v) for k, v in vars(self).items() if isinstance(v, Module)]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    __call__ = forward

    def _cached(self):
        if self._cache is None:
            raise BackwardBeforeForward(f"{type(self).__name__}.backward called before forward")
        return self._cache

    # -- parameter bookkeeping ---------------------------------------------

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self.children():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def _named(self, table: str) -> Iterator[tuple[str, "Module", str]]:
        for mname, mod in self.named_modules():
            for key in getattr(mod, table):
                yield (f"{mname}.{key}" if mname else key), mod, key

    def parameters(self) -> dict[str, np.ndarray]:
        return {name: mod.params[key] for name, mod, key in self._named("params")}

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for name, mod, key in self._named("params"):
            g = mod.grads.get(key)
            out[name] = g if g is not None else np.zeros_like(mod.params[key])
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        state = self.parameters()
        state.update({name: mod.buffers[key] for name, mod, key in self._named("buffers")})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        slots = {name: (mod, key, table) for table in ("params", "buffers")
                 for name, mod, key in self._named(table)}
        missing = set(slots) - set(state)
        extra = set(state) - set(slots)
        if missing or extra:
            raise ShapeMismatch(f"state mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
        for name, (mod, key, table) in slots.items():
            current = getattr(mod, table)[key]
            value = np.asarray(state[name])
            if value.shape != current.shape:
                raise ShapeMismatch(f"{name}: expected shape {current.shape}, got {value.shape}")
            getattr(mod, table)[key] = value.astype(current.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for _, mod in self.named_modules():
            for table in (mod.params, mod.buffers):
                for key in table:
                    table[key] = table[key].astype(dtype)
            mod.grads.clear()
        return self

    def zero_grad(self) -> None:
        for _, mod in self.named_modules():
            mod.grads.clear()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Identity(Module):
    def forward(self, x, train=False):
        return x

    def backward(self, grad):
        return grad


class ReLU(Module):
    def forward(self, x, train=False):
        self._cache = x > 0
        return np.where(self._cache, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return grad * self._cached()


def softplus(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e))


def mish(x: np.ndarray) -> np.ndarray:
    return x * np.tanh(softplus(x))


def mish_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(softplus(x))
    return t + x * (1 - t * t) * sigmoid(x)


class Mish(Module):
    def forward(self, x, train=False):
        self._cache = x
        return mish(x)

    def backward(self, grad):
        return grad * mish_grad(self._cached())


class Softmax(Module):
    """Softmax over the last axis."""

    def forward(self, x, train=False):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
        self._cache = y
        return y

    def backward(self, grad):
        y = self._cached()
        return y * (grad - np.sum(grad * y, axis=-1, keepdims=True))


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        self.params["weight"] = kaiming_uniform(rng, (out_features, in_features), in_features)
        self.params["bias"] = np.zeros(out_features)

    def forward(self, x, train=False):
        if x.shape[-1] != self.in_features:
            raise ShapeMismatch(f"Dense expects {self.in_features} features, got {x.shape[-1]}")
        self._cache = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad):
        x = self._cached()
        x2 = x.reshape(-1, self.in_features)
        g2 = grad.reshape(-1, self.out_features)
        self.grads["weight"] = g2.T @ x2
        self.grads["bias"] = g2.sum(axis=0)
        return grad @ self.params["weight"]


class Conv2d(Module):
    """2-D convolution over channels-last input, no bias (always followed
    by batch norm here)."""

    def __init__(self, in_channels: int, out_channels: int, kernel=(3, 3), stride=(1, 1),
                 padding=None, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)
        self.padding = tuple(padding) if padding is not None else (self.kernel[0] // 2, self.kernel[1] // 2)
        fan_in = in_channels * self.kernel[0] * self.kernel[1]
        self.params["weight"] = kaiming_uniform(rng, (out_channels, in_channels, *self.kernel), fan_in)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.padding
        return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeMismatch(f"Conv2d expects (B, H, W, {self.in_channels}), got {x.shape}")
        b, h, w, c = x.shape
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.padding
        ho, wo = self.output_size(h, w)
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"input {h}x{w} too small for kernel {self.kernel}")
        if kh == kw == 1 and ph == pw == 0:
            cols = x[:, ::sh, ::sw][:, :ho, :wo].reshape(b * ho * wo, c)
        else:
            xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
            win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw][:, :ho, :wo]
            cols = win.reshape(b * ho * wo, c * kh * kw)
        wmat = self.params["weight"].reshape(self.out_channels, -1)
        self._cache = (x.shape, cols)
        return (cols @ wmat.T).reshape(b, ho, wo, self.out_channels)

    def backward(self, grad):
        (b, h, w, c), cols = self._cached()
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.padding
        ho, wo = grad.shape[1:3]
        weight = self.params["weight"]
        g2 = grad.reshape(-1, self.out_channels)
        self.grads["weight"] = (g2.T @ cols).reshape(weight.shape)
        dcols = g2 @ weight.reshape(self.out_channels, -1)
        if kh == kw == 1 and ph == pw == 0:
            dx = np.zeros((b, h, w, c), dtype=grad.dtype)
            dx[:, ::sh, ::sw][:, :ho, :wo] = dcols.reshape(b, ho, wo, c)
            return dx
        dcols = dcols.reshape(b, ho, wo, c, kh, kw)
        dxp = np.zeros((b, h + 2 * ph, w + 2 * pw, c), dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += dcols[..., i, j]
        return dxp[:, ph:ph + h, pw:pw + w]


class BatchNorm(Module):
    """Batch normalisation over every axis but the last (channels)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def forward(self, x, train=False):
        if x.shape[-1] != self.channels:
            raise ShapeMismatch(f"BatchNorm expects {self.channels} channels, got {x.shape[-1]}")
        axes = tuple(range(x.ndim - 1))
        gamma, beta = self.params["gamma"], self.params["beta"]
        if train:
            n = x.size // self.channels
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            m = self.momentum
            unbiased = var * (n / (n - 1)) if n > 1 else var
            self.buffers["running_mean"] = ((1 - m) * self.buffers["running_mean"] + m * mean).astype(x.dtype)
            self.buffers["running_var"] = ((1 - m) * self.buffers["running_var"] + m * unbiased).astype(x.dtype)
        else:
            mean = self.buffers["running_mean"]
            inv_std = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, train)
        return xhat * gamma + beta

    def backward(self, grad):
        xhat, inv_std, train = self._cached()
        axes = tuple(range(grad.ndim - 1))
        gamma = self.params["gamma"]
        self.grads["gamma"] = np.sum(grad * xhat, axis=axes)
        self.grads["beta"] = np.sum(grad, axis=axes)
        dxhat = grad * gamma
        if not train:
            return dxhat * inv_std
        mean_d = dxhat.mean(axis=axes)
        mean_dx = (dxhat * xhat).mean(axis=axes)
        return (dxhat - mean_d - xhat * mean_dx) * inv_std


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)

    def children(self):
        return [(str(i), m) for i, m in enumerate(self.layers)]

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad
