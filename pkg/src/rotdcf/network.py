"""Network assembly, forward/backward orchestration, and the equivariant
feature utilities (zero-input response, circular alignment)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import arch as A
from .filters import JOINT, LIFT, FilterCoeffs
from .layers import (
    AvgPoolLayer,
    DenseLayer,
    FlattenLayer,
    GroupNormLayer,
    IdentityLayer,
    JointConv,
    LiftConv,
    MaxPoolLayer,
    PlainConv,
    ReluLayer,
    softmax_cross_entropy,
)


@dataclass
class StageInfo:
    """Static bookkeeping for one built layer."""

    name: str
    layer: object
    height: int  # input height
    width: int
    out_height: int
    out_width: int
    margin: int  # boundary-contaminated margin of the *output*, in output pixels
    pool_factor: int  # cumulative pooling entering this layer
    scale: float  # 2^{j_l} for conv layers (patch radius x pool factor), else 0
    has_alpha: bool  # output carries a rotation axis


class Network:
    """A stack of layers built from an ArchSpec with deterministic init."""

    def __init__(self, spec: A.ArchSpec, seed: int = 0):
        self.spec = spec
        self.n_theta = spec.n_theta
        rng = np.random.default_rng(seed)
        self.layers: list = []
        self.stages: list[StageInfo] = []

        channels = spec.in_channels
        h = w = spec.image_size
        has_alpha = False
        margin = 0
        pool = 1
        flat = None

        for i, d in enumerate(spec.layers):
            scale = 0.0
            if isinstance(d, A.Lift):
                layer = LiftConv(channels, d.channels, d.k, d.size, spec.n_theta, rng)
                channels, has_alpha = d.channels, True
                scale = (d.size - 1) / 2 * pool
                margin = layer.margin_out(margin, h)
                name = f"lift{i}"
            elif isinstance(d, A.Joint):
                layer = JointConv(
                    channels, d.channels, d.k, d.k_alpha, d.size, spec.n_theta, rng
                )
                channels = d.channels
                scale = (d.size - 1) / 2 * pool
                margin = layer.margin_out(margin, h)
                name = f"joint{i}"
            elif isinstance(d, A.ConvPlain):
                layer = PlainConv(channels, d.channels, d.size, rng)
                channels = d.channels
                scale = (d.size - 1) / 2 * pool
                margin = layer.margin_out(margin, h)
                name = f"conv{i}"
            elif isinstance(d, A.Relu):
                layer, name = ReluLayer(), f"relu{i}"
            elif isinstance(d, A.AvgPool):
                layer, name = AvgPoolLayer(d.size), f"avgpool{i}"
            elif isinstance(d, A.MaxPool):
                layer, name = MaxPoolLayer(d.size), f"maxpool{i}"
            elif isinstance(d, A.GroupNorm):
                layer, name = GroupNormLayer(channels), f"groupnorm{i}"
            elif isinstance(d, A.Flatten):
                layer, name = FlattenLayer(), f"flatten{i}"
                flat = channels * (spec.n_theta if has_alpha else 1) * h * w
            elif isinstance(d, A.Dense):
                if flat is None:
                    raise ValueError("dense layer before flatten")
                layer, name = DenseLayer(flat, d.units, rng), f"dense{i}"
                flat = d.units
            elif isinstance(d, A.SoftmaxLoss):
                continue  # realized by loss_and_grad
            else:
                raise ValueError(f"unknown descriptor {d!r}")

            if isinstance(d, (A.AvgPool, A.MaxPool)):
                margin = layer.margin_out(margin, h)
                out_h, out_w = h // d.size, w // d.size
                pool *= d.size
            elif isinstance(d, (A.Flatten, A.Dense)):
                out_h = out_w = 0
            else:
                out_h, out_w = h, w

            self.stages.append(
                StageInfo(
                    name=name,
                    layer=layer,
                    height=h,
                    width=w,
                    out_height=out_h,
                    out_width=out_w,
                    margin=margin,
                    pool_factor=pool,
                    scale=scale,
                    has_alpha=has_alpha,
                )
            )
            self.layers.append(layer)
            if isinstance(d, (A.Flatten, A.Dense)):
                h = w = 0
            else:
                h, w = out_h, out_w

    # ------------------------------------------------------------- plumbing

    def named_params(self):
        for stage in self.stages:
            for pname, val in stage.layer.params.items():
                yield f"{stage.name}.{pname}", val

    def named_grads(self):
        for stage in self.stages:
            for pname, val in stage.layer.grads.items():
                yield f"{stage.name}.{pname}", val

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def n_params(self) -> int:
        return sum(v.size for _, v in self.named_params())

    def set_param(self, name: str, value: np.ndarray):
        for stage in self.stages:
            for pname, val in stage.layer.params.items():
                if f"{stage.name}.{pname}" == name:
                    if val.shape != value.shape:
                        raise ValueError(
                            f"shape mismatch for {name}: {val.shape} vs {value.shape}"
                        )
                    val[...] = value
                    return
        raise KeyError(name)

    # -------------------------------------------------------------- running

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out = layer.forward(out)
        return out

    def features(self, x: np.ndarray):
        """Forward pass returning every intermediate feature map with its
        stage bookkeeping, stopping before the dense head."""
        out = np.asarray(x, dtype=np.float64)
        feats = []
        for stage in self.stages:
            if isinstance(stage.layer, (FlattenLayer, DenseLayer)):
                break
            out = stage.layer.forward(out)
            feats.append((stage, out))
        return feats

    def loss_and_grad(self, x: np.ndarray, labels: np.ndarray) -> float:
        logits = self.forward(x)
        self.last_logits = logits
        loss, g = softmax_cross_entropy(logits, labels)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return loss

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x).argmax(axis=1)

    # ------------------------------------------------- equivariant utilities

    def conv_stages(self):
        return [s for s in self.stages if isinstance(s.layer, (LiftConv, JointConv, PlainConv))]

    def coeffs_of(self, stage: StageInfo) -> FilterCoeffs:
        layer = stage.layer
        if isinstance(layer, LiftConv):
            return FilterCoeffs(LIFT, layer.params["a"], layer.params["bias"], stage.scale)
        if isinstance(layer, JointConv):
            return FilterCoeffs(JOINT, layer.params["a"], layer.params["bias"], stage.scale)
        raise TypeError(f"{stage.name} has no filter coefficients")

    def zero_input_response(self):
        """Layer outputs from the all-zero input, with per-channel constants.

        Returns a list of (stage, output, const, interior_std) where const is
        the per-channel value over the interior crop.  Interior constancy is
        exact away from the padded border; the caller asserts the tolerance.
        """
        x0 = np.zeros((1, self.spec.in_channels, self.spec.image_size, self.spec.image_size))
        records = []
        for stage, out in self.features(x0):
            m = stage.margin
            if out.ndim >= 4 and out.shape[-1] > 2 * m:
                crop = out[..., m : out.shape[-2] - m, m : out.shape[-1] - m]
                axes = tuple(i for i in range(crop.ndim) if i != 1)
                const = crop.mean(axis=axes)
                std = float(
                    np.sqrt(((crop - const.reshape((1, -1) + (1,) * (crop.ndim - 2))) ** 2).mean())
                )
            else:
                const = None
                std = float("nan")
            records.append((stage, out, const, std))
        return records


def circular_align(f: np.ndarray, axis: int = 0):
    """Roll the rotation axis so the largest-magnitude index lands at 0.

    The aggregate per rotation index is the sum of |.| over all other axes;
    ties break toward the smallest shift.  Returns (aligned, shift) with
    aligned = roll(f, -shift, axis).
    """
    mags = np.abs(f).sum(axis=tuple(i for i in range(f.ndim) if i != axis % f.ndim))
    shift = int(np.argmax(mags))
    return np.roll(f, -shift, axis=axis), shift
