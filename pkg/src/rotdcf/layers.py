"""Runtime layers: forward passes and exact reverse-mode gradients.

Feature maps are (B, M, H, W) before the lift layer and (B, M, S, H, W)
after it, with S = N_theta rotation-indexed channels.  Convolutions are
cross-correlations with same-size zero padding and carry the filter-grid
quadrature weight h^2 = (2/(L-1))^2, so a discrete layer approximates the
continuum integral operator the stability theory reasons about.

The lift layer correlates the input with each basis function once and forms
all N_theta rotated responses by steering the coefficients.  A joint layer
runs the three-stage algorithm: angular transform of the input against the
needed circular frequencies (weight 1/N_theta), spatial correlation with the
basis, then contraction with the per-rotation recombined coefficients.
"""

from __future__ import annotations

import math

import numpy as np

from .basis import (
    CONSTANT,
    COSINE,
    SINE,
    build_angular_basis,
    build_fb_basis,
    steering_matrix,
)
from .kernels import corr2d_bank, corr2d_bank_sum, corr2d_weight_grad, flip_filters


class Layer:
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def margin_out(self, margin: int, height: int) -> int:
        return margin


def _uniform(rng, shape, fan_in):
    s = math.sqrt(3.0 / fan_in)
    return rng.uniform(-s, s, size=shape)


class LiftConv(Layer):
    """First equivariant layer: plain image in, rotation-indexed stack out."""

    def __init__(self, m_in, m_out, k, size, n_theta, rng):
        super().__init__()
        self.m_in, self.m_out, self.n_theta = m_in, m_out, n_theta
        self.size = size
        self.basis = build_fb_basis(size, k)
        self.h2 = self.basis.grid.spacing**2
        angles = 2.0 * np.pi * np.arange(n_theta) / n_theta
        # steer[s] @ a gives the coefficients of slice s (filter at Theta_{alpha_s})
        self.steer = np.stack([steering_matrix(self.basis, -t) for t in angles])
        self.params = {
            "a": _uniform(rng, (m_in, m_out, k), m_in * k),
            "bias": np.zeros(m_out),
        }
        self.grads = {name: np.zeros_like(p) for name, p in self.params.items()}
        self._flipped = flip_filters(self.basis.samples)

    def forward(self, x):
        b, c, h, w = x.shape
        y = corr2d_bank(np.ascontiguousarray(x.reshape(b * c, h, w)), self.basis.samples)
        self._y = y.reshape(b, c, self.basis.k, h, w)
        a_eff = np.einsum("skj,cmj->cmsk", self.steer, self.params["a"])
        out = self.h2 * np.einsum("cmsk,bckhw->bmshw", a_eff, self._y, optimize=True)
        return out + self.params["bias"][None, :, None, None, None]

    def backward(self, gy):
        self.grads["bias"] += gy.sum(axis=(0, 2, 3, 4))
        g_eff = self.h2 * np.einsum("bmshw,bckhw->cmsk", gy, self._y, optimize=True)
        self.grads["a"] += np.einsum("skj,cmsk->cmj", self.steer, g_eff)
        a_eff = np.einsum("skj,cmj->cmsk", self.steer, self.params["a"])
        g_y = self.h2 * np.einsum("cmsk,bmshw->bckhw", a_eff, gy, optimize=True)
        b, c, k, h, w = g_y.shape
        gx = corr2d_bank_sum(
            np.ascontiguousarray(g_y.reshape(b * c, k, h, w)), self._flipped
        )
        return gx.reshape(b, c, h, w)

    def margin_out(self, margin, height):
        return margin + (self.size - 1) // 2


class JointConv(Layer):
    """Joint space x rotation convolution in the decomposed form."""

    def __init__(self, m_in, m_out, k, k_alpha, size, n_theta, rng):
        super().__init__()
        self.m_in, self.m_out, self.n_theta = m_in, m_out, n_theta
        self.size = size
        self.basis = build_fb_basis(size, k)
        self.angular = build_angular_basis(k_alpha, n_theta)
        self.h2 = self.basis.grid.spacing**2
        angles = 2.0 * np.pi * np.arange(n_theta) / n_theta

        # data-transform rows: both phases of every frequency up to max_freq
        q_max = self.angular.max_freq
        grid = 2.0 * np.pi * np.arange(n_theta) / n_theta
        rows = [np.ones(n_theta)]
        self._cos_row = {0: 0}
        self._sin_row = {}
        for q in range(1, q_max + 1):
            self._cos_row[q] = len(rows)
            rows.append(np.cos(q * grid))
            self._sin_row[q] = len(rows)
            rows.append(np.sin(q * grid))
        self.transform = np.stack(rows)  # (R, S)
        r_full = self.transform.shape[0]

        # recombination of angular rows per output rotation:
        # phi_row(alpha' - alpha_s) expanded over the full rows at alpha'
        recomb = np.zeros((n_theta, k_alpha, r_full))
        for idx in range(k_alpha):
            q = int(self.angular.freq[idx])
            par = self.angular.parity[idx]
            for s, t in enumerate(angles):
                if par == CONSTANT:
                    recomb[s, idx, 0] = 1.0
                elif par == COSINE:
                    recomb[s, idx, self._cos_row[q]] = np.cos(q * t)
                    recomb[s, idx, self._sin_row[q]] = np.sin(q * t)
                else:
                    recomb[s, idx, self._cos_row[q]] = -np.sin(q * t)
                    recomb[s, idx, self._sin_row[q]] = np.cos(q * t)
        self.recomb = recomb
        self.steer = np.stack([steering_matrix(self.basis, -t) for t in angles])

        self.params = {
            "a": _uniform(rng, (m_in, m_out, k, k_alpha), m_in * k * k_alpha),
            "bias": np.zeros(m_out),
        }
        self.grads = {name: np.zeros_like(p) for name, p in self.params.items()}
        self._flipped = flip_filters(self.basis.samples)

    def _effective(self):
        # (S, C, M, K, R): steered spatial index, recombined angular rows
        return np.einsum(
            "sjk,sar,cmka->scmjr", self.steer, self.recomb, self.params["a"], optimize=True
        )

    def forward(self, x):
        b, c, s, h, w = x.shape
        xt = np.einsum("rs,bcshw->bcrhw", self.transform, x) / self.n_theta
        r = self.transform.shape[0]
        y = corr2d_bank(
            np.ascontiguousarray(xt.reshape(b * c * r, h, w)), self.basis.samples
        )
        self._y = y.reshape(b, c, r, self.basis.k, h, w)
        out = self.h2 * np.einsum(
            "scmkr,bcrkhw->bmshw", self._effective(), self._y, optimize=True
        )
        return out + self.params["bias"][None, :, None, None, None]

    def backward(self, gy):
        self.grads["bias"] += gy.sum(axis=(0, 2, 3, 4))
        g_eff = self.h2 * np.einsum("bmshw,bcrkhw->scmkr", gy, self._y, optimize=True)
        self.grads["a"] += np.einsum(
            "sjk,sar,scmjr->cmka", self.steer, self.recomb, g_eff, optimize=True
        )
        g_y = self.h2 * np.einsum(
            "scmkr,bmshw->bcrkhw", self._effective(), gy, optimize=True
        )
        b, c, r, k, h, w = g_y.shape
        g_xt = corr2d_bank_sum(
            np.ascontiguousarray(g_y.reshape(b * c * r, k, h, w)), self._flipped
        ).reshape(b, c, r, h, w)
        return np.einsum("rs,bcrhw->bcshw", self.transform, g_xt) / self.n_theta

    def margin_out(self, margin, height):
        return margin + (self.size - 1) // 2


class PlainConv(Layer):
    """Regular convolutional layer (baseline control, no basis, no h^2)."""

    def __init__(self, m_in, m_out, size, rng):
        super().__init__()
        self.m_in, self.m_out, self.size = m_in, m_out, size
        self.params = {
            "w": _uniform(rng, (m_in, m_out, size, size), m_in * size * size),
            "bias": np.zeros(m_out),
        }
        self.grads = {name: np.zeros_like(p) for name, p in self.params.items()}

    def forward(self, x):
        self._x = x
        b, c, h, w = x.shape
        out = np.zeros((b, self.m_out, h, w))
        for ci in range(c):
            out += corr2d_bank(np.ascontiguousarray(x[:, ci]), self.params["w"][ci])
        return out + self.params["bias"][None, :, None, None]

    def backward(self, gy):
        self.grads["bias"] += gy.sum(axis=(0, 2, 3))
        x = self._x
        gx = np.empty_like(x)
        gyc = np.ascontiguousarray(gy)
        for ci in range(x.shape[1]):
            self.grads["w"][ci] += corr2d_weight_grad(
                np.ascontiguousarray(x[:, ci]), gyc, self.size
            )
            gx[:, ci] = corr2d_bank_sum(gyc, flip_filters(self.params["w"][ci]))
        return gx

    def margin_out(self, margin, height):
        return margin + (self.size - 1) // 2


class ReluLayer(Layer):
    def forward(self, x):
        self._mask = x > 0.0
        return np.where(self._mask, x, 0.0)

    def backward(self, gy):
        return np.where(self._mask, gy, 0.0)


class IdentityLayer(Layer):
    """Linear 'activation' used by verification variants."""

    def forward(self, x):
        return x

    def backward(self, gy):
        return gy


def _pool_crop(x, p):
    h, w = x.shape[-2:]
    return x[..., : h - h % p, : w - w % p]


class AvgPoolLayer(Layer):
    def __init__(self, p):
        super().__init__()
        self.p = p

    def forward(self, x):
        p = self.p
        self._in_shape = x.shape
        xc = _pool_crop(x, p)
        hc, wc = xc.shape[-2:]
        self._out_hw = (hc // p, wc // p)
        return xc.reshape(*xc.shape[:-2], hc // p, p, wc // p, p).mean(axis=(-3, -1))

    def backward(self, gy):
        p = self.p
        gx = np.zeros(self._in_shape)
        up = np.repeat(np.repeat(gy, p, axis=-2), p, axis=-1) / (p * p)
        gx[..., : up.shape[-2], : up.shape[-1]] = up
        return gx

    def margin_out(self, margin, height):
        extra = 1 if height % self.p else 0
        return -(-margin // self.p) + extra


class MaxPoolLayer(Layer):
    def __init__(self, p):
        super().__init__()
        self.p = p

    def forward(self, x):
        p = self.p
        self._in_shape = x.shape
        xc = _pool_crop(x, p)
        hc, wc = xc.shape[-2:]
        lead = xc.shape[:-2]
        win = (
            xc.reshape(*lead, hc // p, p, wc // p, p)
            .swapaxes(-3, -2)
            .reshape(*lead, hc // p, wc // p, p * p)
        )
        self._argmax = win.argmax(axis=-1)
        return win.max(axis=-1)

    def backward(self, gy):
        p = self.p
        lead = gy.shape[:-2]
        ho, wo = gy.shape[-2:]
        gwin = np.zeros(lead + (ho, wo, p * p))
        np.put_along_axis(gwin, self._argmax[..., None], gy[..., None], axis=-1)
        gx = np.zeros(self._in_shape)
        restored = gwin.reshape(*lead, ho, wo, p, p).swapaxes(-3, -2).reshape(
            *lead, ho * p, wo * p
        )
        gx[..., : ho * p, : wo * p] = restored
        return gx

    def margin_out(self, margin, height):
        extra = 1 if height % self.p else 0
        return -(-margin // self.p) + extra


class GroupNormLayer(Layer):
    """Per-channel normalization with statistics over (batch, alpha, u).

    Pooling the statistics over the rotation axis keeps the layer
    equivariant; per-alpha statistics would not be.
    """

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.grads = {name: np.zeros_like(p) for name, p in self.params.items()}

    def _axes(self, x):
        return (0,) + tuple(range(2, x.ndim))

    def _expand(self, v, ndim):
        shape = [1] * ndim
        shape[1] = v.size
        return v.reshape(shape)

    def forward(self, x):
        axes = self._axes(x)
        mean = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xh = (x - mean) * self._inv
        self._n = x.size // x.shape[1]
        return self._expand(self.params["gamma"], x.ndim) * self._xh + self._expand(
            self.params["beta"], x.ndim
        )

    def backward(self, gy):
        axes = self._axes(gy)
        self.grads["gamma"] += (gy * self._xh).sum(axis=axes)
        self.grads["beta"] += gy.sum(axis=axes)
        g = gy * self._expand(self.params["gamma"], gy.ndim)
        g_mean = g.mean(axis=axes, keepdims=True)
        gx_mean = (g * self._xh).mean(axis=axes, keepdims=True)
        return self._inv * (g - g_mean - self._xh * gx_mean)


class FlattenLayer(Layer):
    """Flattens (B, M, S, H, W) to (B, M*S*H*W): channel outer, rotation
    middle, pixels inner (C-order)."""

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gy):
        return gy.reshape(self._shape)


class DenseLayer(Layer):
    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self.params = {"w": _uniform(rng, (n_in, n_out), n_in), "bias": np.zeros(n_out)}
        self.grads = {name: np.zeros_like(p) for name, p in self.params.items()}

    def forward(self, x):
        self._x = x
        return x @ self.params["w"] + self.params["bias"]

    def backward(self, gy):
        self.grads["w"] += self._x.T @ gy
        self.grads["bias"] += gy.sum(axis=0)
        return gy @ self.params["w"].T


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and its gradient with respect to logits."""
    n, n_classes = logits.shape
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
