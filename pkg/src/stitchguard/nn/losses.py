from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidConfig, InvalidProbability


@dataclass(frozen=True)
class FocalLossConfig:
    alpha: float = 0.5
    gamma: float = 2.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise InvalidConfig(f"focal alpha must be in (0, 1], got {self.alpha}")
        if self.gamma < 0:
            raise InvalidConfig(f"focal gamma must be >= 0, got {self.gamma}")


def focal_loss(probs: np.ndarray, labels: np.ndarray,
               cfg: FocalLossConfig = FocalLossConfig()) -> tuple[float, np.ndarray]:
    """Mean focal loss ``-alpha (1 - p_t)^gamma log p_t`` over the batch.

    ``probs`` are softmax outputs. The returned gradient is with respect to
    the pre-softmax logits, which avoids dividing by small probabilities.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise InvalidProbability(f"expected (batch, classes) probabilities, got {probs.shape}")
    if np.any(~np.isfinite(probs)) or np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1) > 1e-6):
        raise InvalidProbability("probability rows must be non-negative and sum to 1")
    if np.any(labels < 0) or np.any(labels >= probs.shape[1]):
        raise InvalidProbability("label out of range")
    b = probs.shape[0]
    rows = np.arange(b)
    tiny = np.finfo(probs.dtype).tiny
    p_t = probs[rows, labels]
    log_p = np.log(np.maximum(p_t, tiny))
    rest = 1.0 - p_t
    modulator = rest ** cfg.gamma
    loss = float(np.mean(-cfg.alpha * modulator * log_p))

    if cfg.gamma == 0:
        focus = np.zeros_like(p_t)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            focus = np.where(rest > 0, cfg.gamma * rest ** (cfg.gamma - 1) * p_t * log_p, 0.0)
    # d loss_i / d p_t, times p_t, from the chain through the softmax
    coeff = -cfg.alpha * (modulator - focus)
    onehot = np.zeros_like(probs)
    onehot[rows, labels] = 1.0
    grad = coeff[:, None] * (onehot - probs) / b
    return loss, grad


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    p_t = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(p_t, np.finfo(probs.dtype).tiny))))
