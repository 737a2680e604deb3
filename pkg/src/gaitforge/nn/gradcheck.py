"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np


def relative_errors(analytic: np.ndarray, numeric: np.ndarray,
                    floor: float = 1e-6) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return np.abs(a - n) / denom


def finite_difference_check(loss_fn: Callable[[], tuple],
                            params: dict[str, np.ndarray],
                            eps: float = 1e-5) -> dict[str, float]:
    """Max relative error per parameter tensor vs central finite differences.

    ``loss_fn`` must return ``(loss, grads)`` where ``grads`` is keyed like
    ``params`` and evaluated at the current parameter values; the parameters
    are perturbed in place and restored, so the function must re-read them on
    every call.
    """
    _, grads = loss_fn()
    errors: dict[str, float] = {}
    for name, p in params.items():
        analytic = grads[name]
        numeric = np.empty_like(p)
        flat_p = p.reshape(-1)
        flat_n = numeric.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + eps
            hi, _ = loss_fn()
            flat_p[i] = orig - eps
            lo, _ = loss_fn()
            flat_p[i] = orig
            flat_n[i] = (hi - lo) / (2.0 * eps)
        errors[name] = float(relative_errors(analytic, numeric).max())
    return errors
