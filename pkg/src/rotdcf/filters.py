"""Decomposed filter coefficients, steered filter banks, and the coefficient
norms that control the stability theory.

A lift filter is W(v) = sum_k a(k) psi_k(v); a joint filter adds the angular
factor, W(v, beta) = sum_{k,m} a(k, m) psi_k(v) phi_m(beta).  The boundedness
constant of a layer is

    A_l = pi * max( sup_lambda sum_lambda' ||a||_FB ,
                    (M_prev / M) * sup_lambda' sum_lambda ||a||_FB )

with the eigenvalue-weighted norm ||a||_FB^2 = sum_k mu_k a(k, .)^2.  The
B/C/D integrals (L1 mass of the filter and of its gradient) are evaluated by
midpoint quadrature on a refined disk grid with analytic basis gradients and
are each dominated by A_l.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace

import numpy as np

from .basis import (
    COSINE,
    RADIAL,
    AngularBasisSet,
    SpatialBasisSet,
    build_fb_basis,
    steering_matrix,
)
from .bessel import bessel_j, bessel_j_deriv

LIFT = "lift"
JOINT = "joint"


@dataclass(frozen=True)
class FilterCoeffs:
    """Expansion coefficients of one convolutional layer.

    a has shape (M_prev, M, K) for a lift layer and (M_prev, M, K, K_alpha)
    for a joint layer.  scale is the effective filter radius 2^{j_l} in input
    pixels (patch radius times the cumulative pooling factor), used only by
    the stability bookkeeping.
    """

    layer_kind: str
    a: np.ndarray
    bias: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        if self.layer_kind not in (LIFT, JOINT):
            raise ValueError(f"unknown layer kind {self.layer_kind!r}")
        want = 3 if self.layer_kind == LIFT else 4
        if self.a.ndim != want:
            raise ValueError(
                f"{self.layer_kind} coefficients need {want} axes, got shape {self.a.shape}"
            )
        if not np.all(np.isfinite(self.a)) or not np.all(np.isfinite(self.bias)):
            raise ValueError("non-finite filter coefficients")
        if self.bias.shape != (self.a.shape[1],):
            raise ValueError("bias length must match output channel count")

    @property
    def m_prev(self) -> int:
        return self.a.shape[0]

    @property
    def m_out(self) -> int:
        return self.a.shape[1]

    @property
    def k(self) -> int:
        return self.a.shape[2]

    @property
    def k_alpha(self) -> int:
        return self.a.shape[3] if self.layer_kind == JOINT else 0


@dataclass(frozen=True)
class FilterBank:
    """Spatially realized filters, one slice per output rotation index.

    lift: (M_prev, M, N_theta, L, L); joint: (M_prev, M, N_theta, N_theta,
    L, L) where the second rotation axis indexes the relative angle
    beta = alpha' - alpha.
    """

    layer_kind: str
    w: np.ndarray


def rotation_slice_coeffs(
    coeffs: FilterCoeffs, spatial: SpatialBasisSet, s: int, n_theta: int
) -> np.ndarray:
    """Coefficients whose synthesis equals slice s of the filter bank.

    Slice s realizes v -> W(Theta_{alpha_s} v), which in coefficient space is
    the steering of slice 0 by the inverse rotation angle -2*pi*s/N_theta.
    """
    rot = steering_matrix(spatial, -2.0 * np.pi * s / n_theta)
    return np.einsum("jk,cmk...->cmj...", rot, coeffs.a)


def synthesize_bank(
    coeffs: FilterCoeffs,
    spatial: SpatialBasisSet,
    angular: AngularBasisSet | None,
    n_theta: int,
) -> FilterBank:
    """Realize all rotated copies of a filter set, purely in coefficient space."""
    if coeffs.layer_kind == JOINT:
        if angular is None:
            raise ValueError("joint coefficients need an angular basis")
        if coeffs.k_alpha != angular.k_alpha or angular.n_theta != n_theta:
            raise ValueError("angular basis does not match coefficient shape")
    if coeffs.k != spatial.k:
        raise ValueError(
            f"coefficient K={coeffs.k} does not match spatial basis K={spatial.k}"
        )
    slices = []
    for s in range(n_theta):
        cs = rotation_slice_coeffs(coeffs, spatial, s, n_theta)
        if coeffs.layer_kind == LIFT:
            slices.append(np.einsum("cmk,kxy->cmxy", cs, spatial.samples))
        else:
            slices.append(
                np.einsum("cmkr,kxy,rb->cmbxy", cs, spatial.samples, angular.samples)
            )
    return FilterBank(coeffs.layer_kind, np.stack(slices, axis=2))


def fb_norm(coeff_block: np.ndarray, mu: np.ndarray) -> float:
    """sqrt(sum_k mu_k a(k)^2), summing any trailing angular axis as well."""
    block = np.asarray(coeff_block)
    sq = block * block
    if block.ndim == 2:
        sq = sq.sum(axis=1)
    elif block.ndim != 1:
        raise ValueError(f"expected a K or K x K_alpha block, got shape {block.shape}")
    return float(np.sqrt(np.dot(np.asarray(mu), sq)))


def _fb_norm_matrix(coeffs: FilterCoeffs, mu: np.ndarray) -> np.ndarray:
    sq = coeffs.a * coeffs.a
    if coeffs.layer_kind == JOINT:
        sq = sq.sum(axis=3)
    return np.sqrt(np.tensordot(sq, np.asarray(mu), axes=([2], [0])))


def compute_Al(coeffs: FilterCoeffs, mu: np.ndarray) -> float:
    """Layer boundedness constant from the channel-aggregated FB norms."""
    norms = _fb_norm_matrix(coeffs, mu)  # (M_prev, M)
    col = norms.sum(axis=0).max()
    row = (coeffs.m_prev / coeffs.m_out) * norms.sum(axis=1).max()
    return float(np.pi * max(col, row))


def rescale_to_unit_Al(coeffs: FilterCoeffs, mu: np.ndarray) -> FilterCoeffs:
    """Project a layer onto the A_l = 1 constraint set; biases unchanged."""
    al = compute_Al(coeffs, mu)
    if al <= 0.0:
        raise ValueError("cannot rescale a zero filter layer")
    return replace(coeffs, a=coeffs.a / al)


@dataclass(frozen=True)
class BCDReport:
    """Aggregated filter-mass integrals of one layer.

    b and c are scale-invariant; d is the gradient mass in input-pixel units
    and d_scaled = 2^{j_l} * d is the unit-disk value that A_l dominates.
    """

    b: float
    c: float
    d: float
    d_scaled: float


@functools.lru_cache(maxsize=None)
def _fine_disk_tables(size: int, k: int, quad_factor: int):
    """Continuum-normalized basis values and gradients on a refined disk grid.

    Returns (psi (K, P), grad (K, 2, P), radius (P,), cell area) over pixels
    inside the unit disk of a ((L-1)*q + 1)^2 midpoint grid.
    """
    base = build_fb_basis(size, k)
    fine = quad_factor * (size - 1) + 1
    axis = np.linspace(-1.0, 1.0, fine)
    xs, ys_down = np.meshgrid(axis, axis)
    ys = -ys_down
    rr = np.hypot(xs, ys)
    inside = rr <= 1.0 + 1e-12
    x = xs[inside]
    y = ys[inside]
    r = rr[inside]
    phi = np.arctan2(y, x)
    at_origin = r == 0.0
    p = x.size

    psi = np.zeros((k, p))
    grad = np.zeros((k, 2, p))
    done_pairs = set()
    for idx in range(k):
        if idx in done_pairs:
            continue
        m = int(base.ang_freq[idx])
        z = math.sqrt(base.mu[idx])
        jm = bessel_j(m, z * r)
        jm_d = bessel_j_deriv(m, z * r)
        if m == 0:
            norm = 1.0 / (math.sqrt(math.pi) * abs(bessel_j(1, z)))
            psi[idx] = norm * jm
            dr = norm * z * jm_d
            grad[idx, 0] = np.where(at_origin, 0.0, dr * np.cos(phi))
            grad[idx, 1] = np.where(at_origin, 0.0, dr * np.sin(phi))
        else:
            norm = math.sqrt(2.0) / (math.sqrt(math.pi) * abs(bessel_j(m + 1, z)))
            j = int(base.pair[idx])
            ci, si = (idx, j) if base.parity[idx] == COSINE else (j, idx)
            cmphi, smphi = np.cos(m * phi), np.sin(m * phi)
            psi[ci] = norm * jm * cmphi
            psi[si] = norm * jm * smphi
            with np.errstate(invalid="ignore", divide="ignore"):
                ang = np.where(at_origin, 0.0, norm * m * jm / r)
            dr_c, dr_s = norm * z * jm_d * cmphi, norm * z * jm_d * smphi
            grad[ci, 0] = dr_c * np.cos(phi) + ang * smphi * np.sin(phi)
            grad[ci, 1] = dr_c * np.sin(phi) - ang * smphi * np.cos(phi)
            grad[si, 0] = dr_s * np.cos(phi) - ang * cmphi * np.sin(phi)
            grad[si, 1] = dr_s * np.sin(phi) + ang * cmphi * np.cos(phi)
            if m == 1 and np.any(at_origin):
                # lim_{r->0} grad of J_1(zr){cos,sin}(phi) is norm*z/2 along x or y
                o = at_origin
                grad[ci, 0][o] = norm * z * 0.5
                grad[ci, 1][o] = 0.0
                grad[si, 0][o] = 0.0
                grad[si, 1][o] = norm * z * 0.5
            elif np.any(at_origin):
                o = at_origin
                for kk in (ci, si):
                    grad[kk, 0][o] = 0.0
                    grad[kk, 1][o] = 0.0
            done_pairs.add(j)
    cell = (2.0 / (fine - 1)) ** 2
    return psi, grad, r, cell


def compute_BCD(
    coeffs: FilterCoeffs,
    spatial: SpatialBasisSet,
    angular: AngularBasisSet | None,
    quad_factor: int = 3,
) -> BCDReport:
    """Quadrature evaluation of the filter-mass integrals of one layer.

    The three per-pair integrals are |W|, |v|*|grad W| and |grad W| over the
    unit disk (joint filters additionally average over the relative angle
    with the 1/N_theta convention); aggregation over channels mirrors A_l.
    """
    if quad_factor < 1:
        raise ValueError("quad_factor must be >= 1")
    psi, grad, r, cell = _fine_disk_tables(spatial.grid.size, spatial.k, quad_factor)

    if coeffs.layer_kind == LIFT:
        w = np.tensordot(coeffs.a, psi, axes=([2], [0]))  # (C, M, P)
        g = np.tensordot(coeffs.a, grad, axes=([2], [0]))  # (C, M, 2, P)
        absw = np.abs(w)
        gn = np.hypot(g[:, :, 0], g[:, :, 1])
        b_pair = cell * absw.sum(axis=-1)
        c_pair = cell * (r * gn).sum(axis=-1)
        d_pair = cell * gn.sum(axis=-1)
    else:
        if angular is None:
            raise ValueError("joint coefficients need an angular basis")
        # (C, M, K_alpha, P) spatial contractions, then the beta average
        w = np.einsum("cmka,kp->cmap", coeffs.a, psi)
        g = np.einsum("cmka,kdp->cmadp", coeffs.a, grad)
        wb = np.einsum("cmap,ab->cmbp", w, angular.samples)
        gb = np.einsum("cmadp,ab->cmbdp", g, angular.samples)
        gn = np.hypot(gb[:, :, :, 0], gb[:, :, :, 1])
        b_pair = cell * np.abs(wb).sum(axis=-1).mean(axis=-1)
        c_pair = cell * (r * gn).sum(axis=-1).mean(axis=-1)
        d_pair = cell * gn.sum(axis=-1).mean(axis=-1)

    def aggregate(mat: np.ndarray) -> float:
        col = mat.sum(axis=0).max()
        row = (coeffs.m_prev / coeffs.m_out) * mat.sum(axis=1).max()
        return float(max(col, row))

    b = aggregate(b_pair)
    c = aggregate(c_pair)
    d_disk = aggregate(d_pair)
    return BCDReport(b=b, c=c, d=d_disk / coeffs.scale, d_scaled=d_disk)
