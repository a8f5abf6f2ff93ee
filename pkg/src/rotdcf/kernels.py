"""Hot correlation kernels behind the convolution layers.

Two interchangeable backends: numba-compiled loops (default when numba
imports) and a pure-numpy shift-accumulate path.  Select explicitly with the
environment variable ROTDCF_BACKEND=numba|numpy; anything else falls back to
auto-detection.  All kernels are deterministic: parallel loops only write
disjoint output slots.

Conventions: ``corr2d_bank`` cross-correlates N single-channel images with K
shared L x L filters under same-size zero padding.  ``corr2d_bank_sum`` is
its adjoint building block (callers pass spatially flipped filters to get
the gradient with respect to the input).
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

_requested = os.environ.get("ROTDCF_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(f"ROTDCF_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
if _requested == "numba" and not HAVE_NUMBA:
    raise ImportError("ROTDCF_BACKEND=numba but numba is not importable")
BACKEND = "numpy" if _requested == "numpy" or not HAVE_NUMBA else "numba"


def _pad2d(x: np.ndarray, r: int) -> np.ndarray:
    n, h, w = x.shape
    xp = np.zeros((n, h + 2 * r, w + 2 * r), dtype=np.float64)
    xp[:, r : r + h, r : r + w] = x
    return xp


# ---------------------------------------------------------------- numpy path


def corr2d_bank_numpy(x: np.ndarray, filt: np.ndarray) -> np.ndarray:
    n, h, w = x.shape
    k, l, _ = filt.shape
    xp = _pad2d(x, (l - 1) // 2)
    out = np.zeros((n, k, h, w))
    for a in range(l):
        for b in range(l):
            out += filt[None, :, a, b, None, None] * xp[:, None, a : a + h, b : b + w]
    return out


def corr2d_bank_sum_numpy(g: np.ndarray, filt: np.ndarray) -> np.ndarray:
    n, k, h, w = g.shape
    _, l, _ = filt.shape
    r = (l - 1) // 2
    gp = np.zeros((n, k, h + 2 * r, w + 2 * r))
    gp[:, :, r : r + h, r : r + w] = g
    out = np.zeros((n, h, w))
    for a in range(l):
        for b in range(l):
            out += np.einsum("k,nkij->nij", filt[:, a, b], gp[:, :, a : a + h, b : b + w])
    return out


def corr2d_weight_grad_numpy(x: np.ndarray, g: np.ndarray, l: int) -> np.ndarray:
    n, h, w = x.shape
    k = g.shape[1]
    xp = _pad2d(x, (l - 1) // 2)
    out = np.zeros((k, l, l))
    for a in range(l):
        for b in range(l):
            out[:, a, b] = np.einsum("nij,nkij->k", xp[:, a : a + h, b : b + w], g)
    return out


def conv2d_nchw_numpy(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    b, c, h, wd = x.shape
    _, f, l, _ = w.shape
    r = (l - 1) // 2
    xp = np.zeros((b, c, h + 2 * r, wd + 2 * r))
    xp[:, :, r : r + h, r : r + wd] = x
    out = np.zeros((b, f, h, wd))
    for a in range(l):
        for bb in range(l):
            out += np.einsum(
                "bcij,cf->bfij", xp[:, :, a : a + h, bb : bb + wd], w[:, :, a, bb]
            )
    return out


def conv2d_nchw_grad_x_numpy(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    b, f, h, wd = g.shape
    c, _, l, _ = w.shape
    r = (l - 1) // 2
    gp = np.zeros((b, f, h + 2 * r, wd + 2 * r))
    gp[:, :, r : r + h, r : r + wd] = g
    wf = w[:, :, ::-1, ::-1]
    out = np.zeros((b, c, h, wd))
    for a in range(l):
        for bb in range(l):
            out += np.einsum(
                "bfij,cf->bcij", gp[:, :, a : a + h, bb : bb + wd], wf[:, :, a, bb]
            )
    return out


def conv2d_nchw_grad_w_numpy(x: np.ndarray, g: np.ndarray, l: int) -> np.ndarray:
    b, c, h, wd = x.shape
    f = g.shape[1]
    r = (l - 1) // 2
    xp = np.zeros((b, c, h + 2 * r, wd + 2 * r))
    xp[:, :, r : r + h, r : r + wd] = x
    out = np.zeros((c, f, l, l))
    for a in range(l):
        for bb in range(l):
            out[:, :, a, bb] = np.einsum(
                "bcij,bfij->cf", xp[:, :, a : a + h, bb : bb + wd], g
            )
    return out


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @numba.njit(parallel=True, fastmath=True, cache=True)
    def _corr2d_bank_nb(xp, filt, out):
        n, k, h, w = out.shape
        l = filt.shape[1]
        for ni in numba.prange(n):
            for ki in range(k):
                for i in range(h):
                    for j in range(w):
                        acc = 0.0
                        for a in range(l):
                            for b in range(l):
                                acc += xp[ni, i + a, j + b] * filt[ki, a, b]
                        out[ni, ki, i, j] = acc

    @numba.njit(parallel=True, fastmath=True, cache=True)
    def _corr2d_bank_sum_nb(gp, filt, out):
        n, h, w = out.shape
        k = filt.shape[0]
        l = filt.shape[1]
        for ni in numba.prange(n):
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for ki in range(k):
                        for a in range(l):
                            for b in range(l):
                                acc += gp[ni, ki, i + a, j + b] * filt[ki, a, b]
                    out[ni, i, j] = acc

    @numba.njit(parallel=True, fastmath=True, cache=True)
    def _corr2d_weight_grad_nb(xp, g, out):
        k, l, _ = out.shape
        n, _, h, w = g.shape
        for ki in numba.prange(k):
            for a in range(l):
                for b in range(l):
                    acc = 0.0
                    for ni in range(n):
                        for i in range(h):
                            for j in range(w):
                                acc += xp[ni, i + a, j + b] * g[ni, ki, i, j]
                    out[ki, a, b] = acc

    def corr2d_bank_numba(x: np.ndarray, filt: np.ndarray) -> np.ndarray:
        n, h, w = x.shape
        k, l, _ = filt.shape
        out = np.empty((n, k, h, w))
        _corr2d_bank_nb(_pad2d(x, (l - 1) // 2), np.ascontiguousarray(filt), out)
        return out

    def corr2d_bank_sum_numba(g: np.ndarray, filt: np.ndarray) -> np.ndarray:
        n, k, h, w = g.shape
        l = filt.shape[1]
        r = (l - 1) // 2
        gp = np.zeros((n, k, h + 2 * r, w + 2 * r))
        gp[:, :, r : r + h, r : r + w] = g
        out = np.empty((n, h, w))
        _corr2d_bank_sum_nb(gp, np.ascontiguousarray(filt), out)
        return out

    def corr2d_weight_grad_numba(x: np.ndarray, g: np.ndarray, l: int) -> np.ndarray:
        k = g.shape[1]
        out = np.empty((k, l, l))
        _corr2d_weight_grad_nb(_pad2d(x, (l - 1) // 2), np.ascontiguousarray(g), out)
        return out


if BACKEND == "numba":
    corr2d_bank = corr2d_bank_numba
    corr2d_bank_sum = corr2d_bank_sum_numba
    corr2d_weight_grad = corr2d_weight_grad_numba
else:
    corr2d_bank = corr2d_bank_numpy
    corr2d_bank_sum = corr2d_bank_sum_numpy
    corr2d_weight_grad = corr2d_weight_grad_numpy


def flip_filters(filt: np.ndarray) -> np.ndarray:
    """Spatial 180-degree flip, turning correlation into its adjoint."""
    return np.ascontiguousarray(filt[..., ::-1, ::-1])
