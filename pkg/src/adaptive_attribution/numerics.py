"""Finite differences and small numerical helpers."""
from __future__ import annotations

from typing import Callable

import numpy as np

FD_STEP = 1e-4


def sigmoid(x):
    """Numerically stable logistic function (scalar or array)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def logit(p):
    p = np.asarray(p, dtype=float)
    out = np.log(p) - np.log1p(-p)
    return out if out.ndim else float(out)


def derivative(
    f: Callable[[float], float],
    x0: float = 0.0,
    step: float = FD_STEP,
    lower: float = -np.inf,
    upper: float = np.inf,
    richardson: bool = False,
) -> float:
    """Second-order finite-difference derivative of a scalar function.

    Uses a central difference when ``[x0 - 2*step, x0 + 2*step]`` fits inside
    ``[lower, upper]`` and a one-sided second-order stencil otherwise.
    With ``richardson=True`` the estimates at ``step`` and ``step/2`` are
    combined to cancel the leading error term.
    """

    def once(h):
        if x0 - h >= lower and x0 + h <= upper:
            return (f(x0 + h) - f(x0 - h)) / (2.0 * h)
        if x0 + 2 * h <= upper:
            return (-3.0 * f(x0) + 4.0 * f(x0 + h) - f(x0 + 2 * h)) / (2.0 * h)
        if x0 - 2 * h >= lower:
            return (3.0 * f(x0) - 4.0 * f(x0 - h) + f(x0 - 2 * h)) / (2.0 * h)
        raise ValueError(f"interval [{lower}, {upper}] too narrow for step {h}")

    d1 = once(step)
    if not richardson:
        return d1
    d2 = once(step / 2.0)
    return (4.0 * d2 - d1) / 3.0


def derivative_vector(f, x0=0.0, step=FD_STEP, lower=-np.inf, upper=np.inf):
    """Central difference of an array-valued function of one real variable."""
    if x0 - step >= lower and x0 + step <= upper:
        return (np.asarray(f(x0 + step)) - np.asarray(f(x0 - step))) / (2.0 * step)
    if x0 + 2 * step <= upper:
        f0, f1, f2 = (np.asarray(f(x0 + k * step)) for k in range(3))
        return (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * step)
    f0, f1, f2 = (np.asarray(f(x0 - k * step)) for k in range(3))
    return (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * step)


def jacobian_fd(f, x, step=1e-6):
    """Central-difference Jacobian of ``f: R^d -> R^m`` (or scalar) at ``x``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(f(x + e), dtype=float) - np.asarray(f(x - e), dtype=float)) / (2 * h))
    return np.stack(cols, axis=-1)
