"""Central finite-difference check of backward gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .params import ParamStore
from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` element-wise.

    The floor keeps gradients that are zero up to rounding from producing
    meaningless ratios; it is far below the magnitude of any gradient that
    matters for training.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    loss_fn: Callable[[ParamStore], Tensor],
    store: ParamStore,
    h: float = 1e-4,
    tol: float = 1e-4,
    max_samples: int | None = 40,
    seed: int = 0,
) -> dict:
    """Compare backward gradients with ``(f(θ+h) - f(θ-h)) / 2h``.

    ``loss_fn`` must be deterministic (no dropout noise, batch-norm running
    statistics not updated).  Up to ``max_samples`` coordinates per parameter
    are probed, sampled without replacement; ``None`` probes all of them.

    Returns ``{"per_param": {name: max_rel_err}, "max_rel_err": float,
    "passed": bool, "tol": tol}``.
    """
    rng = np.random.default_rng(seed)
    store.zero_grad()
    loss = loss_fn(store)
    loss.backward()
    analytic = store.grads()

    per_param: dict[str, float] = {}
    for name, t in store.params.items():
        flat = t.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if max_samples is None or n <= max_samples else rng.choice(n, max_samples, replace=False)
        a = analytic[name].reshape(-1)[idx]
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn(store).item()
            flat[i] = orig - h
            fm = loss_fn(store).item()
            flat[i] = orig
            num[j] = (fp - fm) / (2.0 * h)
        per_param[name] = float(relative_error(a, num).max()) if len(idx) else 0.0
    worst = max(per_param.values()) if per_param else 0.0
    return {"per_param": per_param, "max_rel_err": worst, "passed": worst <= tol, "tol": tol}
