"""Steerable bases: Fourier-Bessel functions on the unit disk and Fourier
functions on the circle.

Spatial basis functions are Dirichlet-Laplacian eigenfunctions of the disk,
``J_m(z_{m,n} r) * {1, cos(m phi), sin(m phi)}`` with ``z_{m,n}`` the n-th
positive zero of J_m, ordered by ascending eigenvalue ``mu = z^2``.  Each
``m >= 1`` eigenvalue carries a (cosine, sine) pair; rotation acts on the
pair's coefficients as a 2x2 rotation block, which is what makes the basis
steerable without resampling.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .bessel import bessel_j, bessel_zeros

RADIAL = "radial"
COSINE = "cosine"
SINE = "sine"
CONSTANT = "constant"


class PairSplitError(ValueError):
    """Requested K lands inside a degenerate (cosine, sine) pair."""

    def __init__(self, k, lower, upper):
        self.k = k
        self.lower = lower
        self.upper = upper
        super().__init__(
            f"K={k} splits a cosine/sine pair; nearest valid values are "
            f"K={lower} or K={upper}"
        )


@dataclass(frozen=True)
class DiskGrid:
    """L x L pixel grid identified with the square [-1, 1]^2.

    The center pixel sits at (0, 0) and the mask selects pixels inside the
    closed unit disk.  L must be odd so the grid is symmetric under 90-degree
    rotation.
    """

    size: int
    spacing: float
    xs: np.ndarray  # (L, L) x coordinate, increasing with column index
    ys: np.ndarray  # (L, L) y coordinate, decreasing with row index
    mask: np.ndarray  # (L, L) bool, True inside the unit disk

    @staticmethod
    def build(size: int) -> "DiskGrid":
        if size < 3 or size % 2 == 0:
            raise ValueError(f"patch size must be odd and >= 3, got {size}")
        axis = np.linspace(-1.0, 1.0, size)
        xs, ys_down = np.meshgrid(axis, axis)
        ys = -ys_down  # row index grows downward, y grows upward
        mask = xs * xs + ys * ys <= 1.0 + 1e-12
        return DiskGrid(size, 2.0 / (size - 1), xs, ys, mask)

    @property
    def radius(self) -> np.ndarray:
        return np.hypot(self.xs, self.ys)

    @property
    def angle(self) -> np.ndarray:
        return np.arctan2(self.ys, self.xs)

    @property
    def n_inside(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class SpatialBasisSet:
    """K real Fourier-Bessel functions sampled on a DiskGrid.

    samples[k] is zero outside the disk mask and the set is normalized so the
    h^2-weighted discrete L2 norm of each function is 1 (pairs share one
    normalization constant so steering stays exact on the grid).
    """

    samples: np.ndarray  # (K, L, L)
    ang_freq: np.ndarray  # (K,) int, m(k) >= 0
    parity: tuple[str, ...]  # per-k: radial | cosine | sine
    pair: np.ndarray  # (K,) int, index of steering partner (self for radial)
    mu: np.ndarray  # (K,) continuum Dirichlet eigenvalues (squared zeros)
    radial_index: np.ndarray  # (K,) int, n of the underlying zero z_{m,n}
    grid: DiskGrid

    @property
    def k(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class AngularBasisSet:
    """Real Fourier rows [1, cos, sin, cos 2., sin 2., ...] on N_theta points."""

    samples: np.ndarray  # (K_alpha, N_theta)
    freq: np.ndarray  # (K_alpha,) int
    parity: tuple[str, ...]
    n_theta: int

    @property
    def k_alpha(self) -> int:
        return self.samples.shape[0]

    @property
    def max_freq(self) -> int:
        return int(self.freq.max())


def fb_eigenvalue_order(count: int) -> list[tuple[float, int, int]]:
    """First `count` (zero, m, n) triples ordered by ascending zero, where a
    triple with m >= 1 stands for both members of its cosine/sine pair."""
    order_cap = min(64, max(8, count))
    per_order = min(64, max(8, count))
    cands = []
    for m in range(order_cap + 1):
        for n, z in enumerate(bessel_zeros(m, per_order), start=1):
            cands.append((z, m, n))
    cands.sort()
    # Any candidate missing from orders > order_cap has zero above the first
    # zero of J_{order_cap+1}, bounded below by m + 1.8557 * m^(1/3).
    m_next = order_cap + 1
    missing_floor = m_next + 1.8557 * m_next ** (1.0 / 3.0)
    last_used = cands[min(count, len(cands)) - 1][0]
    if order_cap < 64 and last_used > missing_floor:
        raise ValueError(f"basis enumeration did not cover K={count}")
    return cands[: 2 * count]


def valid_k_values(max_k: int) -> list[int]:
    """Truncation sizes that do not split a degenerate pair."""
    sizes = []
    total = 0
    for _, m, _ in fb_eigenvalue_order(max_k + 2):
        total += 1 if m == 0 else 2
        sizes.append(total)
        if total > max_k + 2:
            break
    return sizes


@functools.lru_cache(maxsize=None)
def build_fb_basis(size: int, k: int) -> SpatialBasisSet:
    """K leading Fourier-Bessel functions on an L x L disk grid.

    Raises PairSplitError when K lands inside a pair and ValueError when K
    exceeds the count resolvable on the grid (the number of in-disk pixels).
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    grid = DiskGrid.build(size)
    if k > grid.n_inside:
        raise ValueError(
            f"K={k} exceeds the {grid.n_inside} functions resolvable on an "
            f"L={size} disk grid"
        )

    sizes = valid_k_values(k)
    if k not in sizes:
        upper = next(s for s in sizes if s > k)
        lower = max((s for s in sizes if s < k), default=0)
        raise PairSplitError(k, lower, upper)

    r = grid.radius
    phi = grid.angle
    inside = grid.mask
    h2 = grid.spacing**2

    samples = np.zeros((k, size, size))
    ang_freq = np.zeros(k, dtype=np.int64)
    parity: list[str] = []
    pair = np.zeros(k, dtype=np.int64)
    mu = np.zeros(k)
    radial_index = np.zeros(k, dtype=np.int64)

    idx = 0
    for z, m, n in fb_eigenvalue_order(k):
        if idx >= k:
            break
        radial = np.zeros_like(r)
        radial[inside] = bessel_j(m, z * r[inside])
        if m == 0:
            f = radial
            f = f / np.sqrt(h2 * np.sum(f * f))
            samples[idx] = f
            ang_freq[idx] = 0
            parity.append(RADIAL)
            pair[idx] = idx
            mu[idx] = z * z
            radial_index[idx] = n
            idx += 1
        else:
            fc = radial * np.cos(m * phi)
            fs = radial * np.sin(m * phi)
            # one shared constant keeps 90-degree steering grid-exact
            scale = np.sqrt(0.5 * h2 * (np.sum(fc * fc) + np.sum(fs * fs)))
            samples[idx] = fc / scale
            samples[idx + 1] = fs / scale
            ang_freq[idx] = ang_freq[idx + 1] = m
            parity.extend((COSINE, SINE))
            pair[idx] = idx + 1
            pair[idx + 1] = idx
            mu[idx] = mu[idx + 1] = z * z
            radial_index[idx] = radial_index[idx + 1] = n
            idx += 2

    return SpatialBasisSet(
        samples=samples,
        ang_freq=ang_freq,
        parity=tuple(parity),
        pair=pair,
        mu=mu,
        radial_index=radial_index,
        grid=grid,
    )


@functools.lru_cache(maxsize=None)
def build_angular_basis(k_alpha: int, n_theta: int) -> AngularBasisSet:
    """K_alpha Fourier rows sampled at angles 2*pi*s/N_theta."""
    if n_theta < 2:
        raise ValueError(f"N_theta must be >= 2, got {n_theta}")
    if not (1 <= k_alpha <= n_theta):
        raise ValueError(
            f"K_alpha={k_alpha} aliases on {n_theta} circle points "
            f"(need 1 <= K_alpha <= N_theta)"
        )
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    rows = [np.ones(n_theta)]
    freq = [0]
    parity = [CONSTANT]
    q = 1
    while len(rows) < k_alpha:
        rows.append(np.cos(q * theta))
        freq.append(q)
        parity.append(COSINE)
        if len(rows) < k_alpha:
            rows.append(np.sin(q * theta))
            freq.append(q)
            parity.append(SINE)
        q += 1
    return AngularBasisSet(
        samples=np.stack(rows),
        freq=np.asarray(freq, dtype=np.int64),
        parity=tuple(parity),
        n_theta=n_theta,
    )


def steering_matrix(basis: SpatialBasisSet, t: float) -> np.ndarray:
    """K x K matrix S(t) rotating a filter in coefficient space.

    For coefficients c, the filter synthesized from S(t) @ c equals the
    analytic rotation by angle t (counterclockwise in the grid's x-y frame)
    of the filter synthesized from c.  Radial functions get 1x1 identity
    blocks; (cosine, sine) pairs get 2x2 rotation blocks of angle m(k)*t.
    """
    k = basis.k
    s = np.zeros((k, k))
    for i in range(k):
        m = int(basis.ang_freq[i])
        if basis.parity[i] == RADIAL:
            s[i, i] = 1.0
        elif basis.parity[i] == COSINE:
            j = int(basis.pair[i])
            s[i, i] = np.cos(m * t)
            s[i, j] = -np.sin(m * t)
        else:
            j = int(basis.pair[i])
            s[i, i] = np.cos(m * t)
            s[i, j] = np.sin(m * t)
    return s


def synthesize_filter(basis: SpatialBasisSet, coeffs: np.ndarray) -> np.ndarray:
    """Contract a coefficient vector (...,K) with the sampled basis."""
    return np.tensordot(coeffs, basis.samples, axes=([-1], [0]))
