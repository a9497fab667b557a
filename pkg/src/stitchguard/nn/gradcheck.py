"""Central finite-difference gradient checking.

Errors are reported per array as ``max|analytic - numeric|`` divided by the
larger of the two gradients' max magnitudes; the worst array wins. Run in
float64; finite differences are meaningless at float32.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .layers import Module


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), floor)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def grad_check(loss_and_grads: Callable[[bool], tuple[float, dict[str, np.ndarray] | None]],
               arrays: dict[str, np.ndarray], epsilon: float = 1e-5,
               max_entries: int | None = None, rng: np.random.Generator | None = None,
               report: dict | None = None) -> float:
    """Compare analytic gradients with central differences.

    ``arrays`` maps names to the live arrays the loss reads; they are
    perturbed in place and restored. ``loss_and_grads`` recomputes the loss
    from their current contents; called with ``True`` it must also return
    analytic gradients keyed the same way, with ``False`` it may skip them. With ``max_entries`` only that many randomly chosen entries
    per array are perturbed.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    _, analytic = loss_and_grads(True)
    analytic = {k: np.array(v, copy=True) for k, v in analytic.items()}
    worst = 0.0
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError(f"{name} is not contiguous; cannot perturb in place")
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(len(idx))
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus, _ = loss_and_grads(False)
            flat[i] = orig - epsilon
            f_minus, _ = loss_and_grads(False)
            flat[i] = orig
            numeric[n] = (f_plus - f_minus) / (2 * epsilon)
        err = relative_error(analytic[name].reshape(-1)[idx], numeric)
        if report is not None:
            report[name] = err
        worst = max(worst, err)
    return worst


def check_module(module: Module, x: np.ndarray, epsilon: float = 1e-5, train: bool = True,
                 max_entries: int | None = None, seed: int = 0, report: dict | None = None) -> float:
    """Gradient-check ``module`` on input ``x`` under a random linear loss.

    Both the parameters and the input are checked. The module is cast to
    float64 in place.
    """
    module.astype(np.float64)
    x = np.array(x, dtype=np.float64, copy=True)
    # separate stream so the projection never coincides with a seeded input
    rng = np.random.default_rng([seed, 0x5EED])
    projection = rng.standard_normal(module.forward(x, train=train).shape)

    def loss_and_grads(with_grads):
        out = module.forward(x, train=train)
        loss = float(np.sum(out * projection))
        if not with_grads:
            return loss, None
        dx = module.backward(projection)
        grads = dict(module.gradients())
        grads["<input>"] = dx
        return loss, grads

    arrays = dict(module.parameters())
    arrays["<input>"] = x
    return grad_check(loss_and_grads, arrays, epsilon, max_entries, rng, report)
