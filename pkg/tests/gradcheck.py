"""Central finite-difference gradient checking used across the test suite."""

import numpy as np


def numerical_grad(f, arr, h=1e-6):
    """Central differences of scalar-valued f with respect to every entry of arr."""
    arr = np.asarray(arr, dtype=np.float64)
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        up = arr.copy()
        up[idx] += h
        down = arr.copy()
        down[idx] -= h
        grad[idx] = (f(up) - f(down)) / (2.0 * h)
    return grad


def max_rel_err(analytic, numeric, floor=1e-6):
    """Largest relative error, with a floor on the denominator.

    Entries where both gradients are below the floor are compared on that
    absolute scale instead, which keeps finite-difference noise on exact
    zeros from dominating the statistic.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
