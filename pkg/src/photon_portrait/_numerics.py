"""Small numerical kernels shared across modules."""

from __future__ import annotations

import math

import numpy as np


def exp_step_weights(lam, h: float):
    """Exact one-step weights for ``y' = -lam y + x`` with ``x`` linear over the step.

    Returns ``(E, b0, b1)`` such that ``y(h) = E y(0) + b0 x(0) + b1 x(h)``.
    Works elementwise on arrays of ``lam``.
    """
    z = np.asarray(lam, dtype=complex) * h
    E = np.exp(-z)
    # closed forms cancel badly for small |z|; below 0.5 use the Taylor series
    # b0 = sum (-z)^n (n+1)/(n+2)!, b1 = sum (-z)^n/(n+2)!, truncated at n = 15
    small = np.abs(z) < 0.5
    zs = np.where(small, 1.0, z)
    s0 = np.zeros_like(z)
    s1 = np.zeros_like(z)
    zt = np.where(small, z, 0.0)
    for n in range(15, -1, -1):
        c = 1.0 / math.factorial(n + 2)
        s0 = s0 * (-zt) + (n + 1) * c
        s1 = s1 * (-zt) + c
    b0 = np.where(small, s0, (1 - E - zs * E) / zs**2)
    b1 = np.where(small, s1, (zs - 1 + E) / zs**2)
    if np.ndim(lam) == 0:
        return complex(E), complex(h * b0), complex(h * b1)
    return E, h * b0, h * b1


def expm1_ratio(x, t):
    """``(exp(x t) - 1) / x`` with the removable singularity at ``x = 0`` filled by ``t``."""
    x = np.asarray(x, dtype=complex)
    t = np.asarray(t, dtype=float)
    xt = x * t
    small = np.abs(xt) < 1e-8
    safe_x = np.where(np.abs(x) == 0, 1.0, x)
    val = np.where(small, t * (1 + 0.5 * xt), np.expm1(xt) / safe_x)
    return val


def log_slope(times, values) -> float:
    """Least-squares slope of ``log|values|`` against ``times``."""
    times = np.asarray(times, dtype=float)
    mag = np.abs(np.asarray(values))
    return float(np.polyfit(times, np.log(mag), 1)[0])


def relative_l2(a, b) -> float:
    """``||a - b|| / ||b||``."""
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))
