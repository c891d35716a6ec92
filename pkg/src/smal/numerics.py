"""Bracketing root search, periodic quadrature and small vector helpers."""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np


class Root(NamedTuple):
    x: float
    found: bool


def periodic_trapezoid(values: np.ndarray) -> float:
    """Mean of a periodic integrand sampled at N equispaced nodes over one period.

    For periodic integrands the composite trapezoid rule reduces to the
    sample mean and converges geometrically.
    """
    return float(np.mean(values, axis=-1))


def bisect(f: Callable[[float], float], a: float, b: float, fa: float | None = None, rtol: float = 1e-12) -> float:
    """Plain bisection on a bracket with ``f(a)`` and ``f(b)`` of opposite sign."""
    fa = f(a) if fa is None else fa
    width = abs(b - a)
    for _ in range(200):
        if abs(b - a) <= rtol * width:
            break
        mid = 0.5 * (a + b)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if np.sign(fm) == np.sign(fa):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def scan_root(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    n_scan: int = 200,
    rtol: float = 1e-12,
) -> Root:
    """First sign change of ``f`` on ``[lo, hi]``, refined by bisection.

    ``f`` is sampled at ``n_scan`` equispaced points; the first bracketing
    pair (scanning from ``lo``) is bisected down to ``rtol`` of its width.
    Without a sign change the scan point minimising ``|f|`` is returned with
    ``found=False``.
    """
    xs = np.linspace(lo, hi, n_scan)
    vals = np.array([f(x) for x in xs])
    for k in range(n_scan):
        if vals[k] == 0.0:
            return Root(float(xs[k]), True)
        if k + 1 < n_scan and np.sign(vals[k]) != np.sign(vals[k + 1]) and vals[k + 1] != 0.0:
            return Root(bisect(f, xs[k], xs[k + 1], vals[k], rtol), True)
    k = int(np.argmin(np.abs(vals)))
    return Root(float(xs[k]), False)


def cross3(a, b) -> np.ndarray:
    """Cross product of two 3-vectors; much cheaper than ``np.cross`` for single vectors."""
    a0, a1, a2 = a
    b0, b1, b2 = b
    return np.array([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])
