"""Central finite differences, kept independent of the tape."""
from __future__ import annotations

import numpy as np


def numeric_grad(f, array, eps=1e-6, indices=None):
    """Central-difference gradient of scalar ``f()`` w.r.t. ``array`` (mutated in place).

    ``indices`` restricts the check to some flat positions; other entries are NaN.
    """
    flat = array.reshape(-1)
    out = np.full(flat.shape, np.nan)
    for i in range(flat.size) if indices is None else indices:
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        out[i] = (hi - lo) / (2 * eps)
    return out.reshape(array.shape)


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor stops near-zero entries, whose finite-difference value is
    dominated by round-off, from reading as large relative errors.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def check_gradients(f, arrays, analytic, steps=(1e-4, 1e-6), floor=1e-6, recheck_above=1e-5):
    """Worst relative error per array between ``analytic`` and central differences.

    Every entry is first differenced with ``steps[0]``.  Entries whose error
    exceeds ``recheck_above`` are differenced again with each later step and
    keep their smallest error: a large step can straddle a ReLU kink, while a
    small one loses digits to round-off, so each entry is scored by the step
    that suits it.
    """
    worst = []
    for array, grad in zip(arrays, analytic):
        grad = np.asarray(grad).reshape(-1)
        err = relative_error(grad, numeric_grad(f, array, steps[0]).reshape(-1), floor)
        for eps in steps[1:]:
            idx = np.flatnonzero(err > recheck_above)
            if not len(idx):
                break
            num = numeric_grad(f, array, eps, idx).reshape(-1)[idx]
            err[idx] = np.minimum(err[idx], relative_error(grad[idx], num, floor))
        worst.append(float(err.max()) if err.size else 0.0)
    return worst
