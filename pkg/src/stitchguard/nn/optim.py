from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import InvalidConfig, ShapeMismatch


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"  # "adam" or "sgd_momentum"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.kind not in ("adam", "sgd_momentum"):
            raise InvalidConfig(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be positive")
        if self.weight_decay < 0:
            raise InvalidConfig("weight_decay must be >= 0")

    def scaled(self, lr_factor: float) -> "OptimizerConfig":
        return replace(self, learning_rate=self.learning_rate * lr_factor)


def optimizer_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: dict,
                   cfg: OptimizerConfig) -> dict:
    """Update ``params`` in place and return the (mutated) optimiser state.

    Weight decay is the classic L2 term added to the gradient.
    """
    state.setdefault("step", 0)
    state["step"] += 1
    t = state["step"]
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p
        if cfg.kind == "sgd_momentum":
            v = state.setdefault(("v", name), np.zeros_like(p))
            v *= cfg.momentum
            v += g
            p -= (cfg.learning_rate * v).astype(p.dtype, copy=False)
        else:
            m = state.setdefault(("m", name), np.zeros_like(p))
            v = state.setdefault(("v", name), np.zeros_like(p))
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            m_hat = m / (1 - cfg.beta1 ** t)
            v_hat = v / (1 - cfg.beta2 ** t)
            p -= (cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.dtype, copy=False)
    return state
