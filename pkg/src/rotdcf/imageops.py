"""Bilinear resampling primitives shared by the data pipeline and the
verification harness.

Coordinates: pixel (i, j) of an H x W image sits at x = j - cx (rightward)
and y = cy - i (upward), with (cy, cx) the rotation center.  ``rotate``
implements the pullback action out(u) = in(c + Theta_t (u - c)) with Theta_t
the counterclockwise rotation in this frame; angles that are multiples of
pi/2 about the grid center of a square image reduce to exact pixel
permutations and are evaluated that way.
"""

from __future__ import annotations

import numpy as np


def bilinear_gather(img: np.ndarray, src_rows: np.ndarray, src_cols: np.ndarray) -> np.ndarray:
    """Sample img (..., H, W) at fractional positions, zero outside."""
    h, w = img.shape[-2:]
    r0 = np.floor(src_rows)
    c0 = np.floor(src_cols)
    wr = src_rows - r0
    wc = src_cols - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)

    out = np.zeros(img.shape[:-2] + src_rows.shape, dtype=img.dtype)
    for dr, dc, weight in (
        (0, 0, (1 - wr) * (1 - wc)),
        (0, 1, (1 - wr) * wc),
        (1, 0, wr * (1 - wc)),
        (1, 1, wr * wc),
    ):
        rr = r0 + dr
        cc = c0 + dc
        valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        rs = np.clip(rr, 0, h - 1)
        cs = np.clip(cc, 0, w - 1)
        out += img[..., rs, cs] * (weight * valid)
    return out


def _is_center(center, h, w) -> bool:
    return center is None or (
        abs(center[0] - (h - 1) / 2.0) < 1e-9 and abs(center[1] - (w - 1) / 2.0) < 1e-9
    )


def rotate(img: np.ndarray, angle: float, center: tuple[float, float] | None = None) -> np.ndarray:
    """Rotation pullback out(u) = in(c + Theta_angle (u - c)), zero fill."""
    h, w = img.shape[-2:]
    quarter = angle / (np.pi / 2.0)
    k = int(np.round(quarter))
    if h == w and _is_center(center, h, w) and abs(quarter - k) < 1e-12:
        return np.rot90(img, k=-k, axes=(-2, -1)).copy()

    cy, cx = ((h - 1) / 2.0, (w - 1) / 2.0) if center is None else center
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    x = jj - cx
    y = cy - ii
    ct, st = np.cos(angle), np.sin(angle)
    xr = ct * x - st * y
    yr = st * x + ct * y
    return bilinear_gather(img, cy - yr, cx + xr)


def displace(img: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Deformation pullback out(u) = in(u - tau(u)).

    tau has shape (2, H, W): tau[0] is the row displacement, tau[1] the
    column displacement, both in pixels.
    """
    h, w = img.shape[-2:]
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return bilinear_gather(img, ii - tau[0], jj - tau[1])


def jacobian_sup_norm(tau: np.ndarray) -> float:
    """sup over pixels of the operator norm of the displacement Jacobian."""
    g = np.stack(
        [np.stack(np.gradient(tau[0]), axis=0), np.stack(np.gradient(tau[1]), axis=0)],
        axis=0,
    )  # (component, derivative-direction, H, W)
    a, b = g[0, 0], g[0, 1]
    c, d = g[1, 0], g[1, 1]
    # largest singular value of [[a, b], [c, d]] per pixel
    q = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = np.sqrt(np.maximum(q * q - 4.0 * det * det, 0.0))
    sigma_max_sq = 0.5 * (q + disc)
    return float(np.sqrt(sigma_max_sq.max()))
