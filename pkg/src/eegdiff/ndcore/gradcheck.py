"""Central finite-difference gradient oracle."""

from __future__ import annotations

from typing import Callable

import numpy as np


def finite_difference_gradient(f: Callable[[np.ndarray], float], point: np.ndarray,
                               h: float = 1e-4) -> np.ndarray:
    """Central-difference estimate of d f / d point, per coordinate.

    ``f`` must be scalar-valued. Raises if any perturbed evaluation is
    non-finite.
    """
    point = np.asarray(point, dtype=np.float64)
    grad = np.zeros_like(point)
    flat = point.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(point))
        flat[i] = orig - h
        fm = float(f(point))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| normalized by the numeric gradient's max magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / denom
