"""Bessel functions of the first kind and their positive zeros.

Evaluation uses the ascending power series for small arguments and Miller's
downward recurrence with the even-order normalization identity
``J_0 + 2*(J_2 + J_4 + ...) = 1`` elsewhere.  Zeros are located by unit-step
bracketing (consecutive zeros of J_m are more than pi apart) followed by
bisection and a short Newton polish.
"""

from __future__ import annotations

import functools
import math

import numpy as np

MAX_ORDER = 64
MAX_COUNT = 64

_SERIES_CUTOFF = 2.0
_RESCALE_LIMIT = 1e250


def _series_scalar(order: int, x: float) -> float:
    half = x / 2.0
    term = half**order / math.factorial(order)
    total = term
    hh = half * half
    for j in range(1, 40):
        term = -term * hh / (j * (order + j))
        total += term
    return total


def _miller_scalar(order: int, x: float) -> float:
    top = max(order, x)
    start = int(top + 1.5 * math.sqrt(top) + 32)
    if start % 2:
        start += 1
    p_up = 0.0
    p = 1e-30
    even_sum = p  # start index is even
    target = 0.0
    for k in range(start, 0, -1):
        p_down = (2.0 * k / x) * p - p_up
        p_up = p
        p = p_down
        if k - 1 == order:
            target = p
        if (k - 1) % 2 == 0 and k - 1 > 0:
            even_sum += p
        if abs(p) > _RESCALE_LIMIT:
            p *= 1e-250
            p_up *= 1e-250
            even_sum *= 1e-250
            target *= 1e-250
    return target / (p + 2.0 * even_sum)  # p is now the J_0 proxy


def _bessel_j_scalar(order: int, x: float) -> float:
    if x == 0.0:
        return 1.0 if order == 0 else 0.0
    if x <= _SERIES_CUTOFF:
        return _series_scalar(order, x)
    return _miller_scalar(order, x)


def bessel_j(order: int, x) -> np.ndarray | float:
    """J_order(x) for real x >= 0, elementwise over arrays."""
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    if np.isscalar(x) or np.ndim(x) == 0:
        return _bessel_j_scalar(order, float(x))
    xs = np.asarray(x, dtype=np.float64)
    flat = xs.reshape(-1)
    out = np.fromiter(
        (_bessel_j_scalar(order, float(v)) for v in flat), dtype=np.float64, count=flat.size
    )
    return out.reshape(xs.shape)


def bessel_j_deriv(order: int, x) -> np.ndarray | float:
    """d/dx J_order(x), via J'_m = (J_{m-1} - J_{m+1}) / 2 and J'_0 = -J_1."""
    if order == 0:
        return -1.0 * bessel_j(1, x)
    return 0.5 * (bessel_j(order - 1, x) - bessel_j(order + 1, x))


def bessel_zeros(order: int, count: int) -> tuple[float, ...]:
    """First `count` positive zeros of J_order, ascending.

    Raises ValueError for arguments outside the supported range
    (0 <= order <= 64, 1 <= count <= 64).
    """
    if not (0 <= order <= MAX_ORDER):
        raise ValueError(f"order out of range [0, {MAX_ORDER}]: {order}")
    if not (1 <= count <= MAX_COUNT):
        raise ValueError(f"count out of range [1, {MAX_COUNT}]: {count}")
    # round the cached batch up so repeated calls with nearby counts share work
    batch = min(MAX_COUNT, max(8, 1 << (count - 1).bit_length()))
    return _zeros_cached(order, batch)[:count]


@functools.lru_cache(maxsize=None)
def _zeros_cached(order: int, count: int) -> tuple[float, ...]:
    zeros: list[float] = []
    # J_order > 0 on (0, first zero); step 1.0 cannot skip a zero because the
    # spacing between consecutive zeros exceeds pi.
    x = max(float(order), 0.5)
    f = _bessel_j_scalar(order, x)
    while len(zeros) < count:
        x_next = x + 1.0
        f_next = _bessel_j_scalar(order, x_next)
        if f == 0.0:
            zeros.append(x)
        elif f * f_next < 0.0:
            zeros.append(_refine_zero(order, x, x_next))
        x, f = x_next, f_next
    return tuple(zeros[:count])


def _refine_zero(order: int, lo: float, hi: float) -> float:
    f_lo = _bessel_j_scalar(order, lo)
    for _ in range(54):
        mid = 0.5 * (lo + hi)
        f_mid = _bessel_j_scalar(order, mid)
        if f_mid == 0.0:
            return mid
        if f_lo * f_mid < 0.0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    z = 0.5 * (lo + hi)
    for _ in range(2):
        dz = _bessel_j_scalar(order, z) / (
            0.5 * (_bessel_j_scalar(order - 1, z) - _bessel_j_scalar(order + 1, z))
            if order > 0
            else -_bessel_j_scalar(1, z)
        )
        z_new = z - dz
        if lo < z_new < hi:
            z = z_new
    return z
