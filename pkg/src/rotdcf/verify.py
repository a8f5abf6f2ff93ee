"""Numerical certification of the equivariance and stability theory.

The checks implemented here:

* equivariance: rotating the input commutes with the network up to the
  feature-space action (spatial rotation plus a circular shift of the
  rotation axis), measured on an interior crop whose margin equals the
  cumulative receptive-field radius (zero padding breaks the identity near
  the border, so the border is excluded rather than hidden);
* non-expansiveness of every layer map and monotonicity of centered feature
  norms after rescaling all layers to unit boundedness constant;
* the deformation stability bound for inputs warped by a rotation composed
  with a small displacement field;
* finite-difference validation of the analytic gradients.

All comparisons use the normalized feature norm (root mean square), which
matches the paper-style normalized integrals at every resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imageops import displace, jacobian_sup_norm, rotate
from .filters import compute_Al, rescale_to_unit_Al
from .layers import JointConv, LiftConv, PlainConv, softmax_cross_entropy
from .network import Network

SMALL_DISTORTION_LIMIT = 0.2  # assumption gate: |grad tau|_inf < 1/5


@dataclass(frozen=True)
class RigidRotation:
    """Rotation around a pixel-space point by angle t (radians).

    center None means the grid center of whatever image it is applied to.
    """

    angle: float
    center: tuple[float, float] | None = None


@dataclass(frozen=True)
class DeformationField:
    """Displacement field in pixels with cached sup norms.

    sup_tau_domain converts |tau|_inf to the [-1, 1]^2 domain convention of
    the input image.  satisfies_small_distortion flags |grad tau|_inf < 1/5.
    """

    tau: np.ndarray  # (2, H, W): row and column displacement in pixels
    sup_tau_pixels: float
    sup_tau_domain: float
    sup_grad: float
    satisfies_small_distortion: bool


def rotate_image(x: np.ndarray, rot: RigidRotation) -> np.ndarray:
    """D_rho: out(u) = x(rho u); exact permutation at 90-degree multiples."""
    return rotate(x, rot.angle, rot.center)


def make_deformation(kind: str, magnitude, seed: int, h: int, w: int) -> DeformationField:
    """Build a displacement field.

    kind='translation': magnitude is a (rows, cols) vector in pixels (a
    scalar means that many pixels along the column axis).  kind
    'smooth-random': band-limited random field rescaled so the measured
    |grad tau|_inf equals `magnitude`.
    """
    if kind == "translation":
        if np.isscalar(magnitude):
            vec = (0.0, float(magnitude))
        else:
            vec = (float(magnitude[0]), float(magnitude[1]))
        tau = np.zeros((2, h, w))
        tau[0] += vec[0]
        tau[1] += vec[1]
    elif kind == "smooth-random":
        if not np.isscalar(magnitude) or magnitude <= 0:
            raise ValueError("smooth-random magnitude must be a positive scalar")
        rng = np.random.default_rng(seed)
        ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        tau = np.zeros((2, h, w))
        for comp in range(2):
            acc = np.zeros((h, w))
            for fr in range(3):
                for fc in range(3):
                    if fr == 0 and fc == 0:
                        continue
                    phase = 2.0 * np.pi * (fr * ii / h + fc * jj / w)
                    a, b = rng.standard_normal(2) / (1.0 + fr + fc)
                    acc += a * np.cos(phase) + b * np.sin(phase)
            tau[comp] = acc
        measured = jacobian_sup_norm(tau)
        tau *= magnitude / measured
    else:
        raise ValueError(f"unknown deformation kind {kind!r}")
    grad = jacobian_sup_norm(tau)
    sup_pix = float(np.sqrt((tau**2).sum(axis=0)).max())
    return DeformationField(
        tau=tau,
        sup_tau_pixels=sup_pix,
        sup_tau_domain=sup_pix * 2.0 / (h - 1),
        sup_grad=grad,
        satisfies_small_distortion=grad < SMALL_DISTORTION_LIMIT,
    )


def apply_deformation(x: np.ndarray, fld: DeformationField) -> np.ndarray:
    """D_tau: out(u) = x(u - tau(u)), bilinear, zero outside the domain."""
    return displace(x, fld.tau)


def apply_Trho(f: np.ndarray, steps: int, n_theta: int, has_alpha: bool = True) -> np.ndarray:
    """T_rho for t = 2*pi*steps/n_theta: out(u, alpha) = f(rho u, alpha - t).

    The alpha shift is the integer roll by `steps`; other angles would need
    interpolation along the rotation axis and are rejected.
    """
    if not float(steps).is_integer():
        raise ValueError("T_rho is only defined for integer multiples of 2*pi/N_theta")
    steps = int(steps) % n_theta
    t = 2.0 * np.pi * steps / n_theta
    spun = rotate(f, t)
    if has_alpha:
        spun = np.roll(spun, steps, axis=-3)
    return spun


def feature_norm(f: np.ndarray) -> float:
    """Normalized L2 norm: root mean square over all entries."""
    return float(np.sqrt(np.mean(np.square(f))))


def _crop(f: np.ndarray, margin: int) -> np.ndarray:
    if margin == 0:
        return f
    return f[..., margin:-margin, margin:-margin]


@dataclass
class CheckRecord:
    check: str
    params: dict
    lhs: float
    rhs: float
    tolerance: float
    ok: bool
    note: str = ""

    def as_json(self) -> dict:
        return {
            "check": self.check,
            "params": self.params,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "tolerance": self.tolerance,
            "pass": bool(self.ok),
            "note": self.note,
        }


def equivariance_records(
    net: Network, image: np.ndarray, steps: int, n_theta: int | None = None
) -> list[CheckRecord]:
    """Relative equivariance error at every layer with a valid interior crop.

    lhs is ||x_l[D_rho x] - T_rho x_l[x]|| / ||x_l[x]|| over the crop; layers
    whose margin reaches half the feature size are reported as skipped.  The
    rotation angle is 2*pi*steps/n_theta (n_theta defaults to the net's own
    resolution; plain baselines without a rotation axis pass it explicitly).
    """
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if n_theta is None:
        n_theta = net.n_theta
    elif n_theta != net.n_theta and net.spec.equivariant:
        raise ValueError("cannot override n_theta for a rotation-indexed net")
    t = 2.0 * np.pi * steps / n_theta
    x_rot = rotate(x, t)
    feats = net.features(x)
    feats_rot = net.features(x_rot)
    records = []
    for (stage, f), (_, f_rot) in zip(feats, feats_rot):
        if f.ndim < 4:
            continue
        h = f.shape[-1]
        margin = stage.margin
        params = {"layer": stage.name, "steps": steps, "margin": margin,
                  "interior": h - 2 * margin}
        if 2 * margin >= min(f.shape[-2], h):
            records.append(
                CheckRecord("equivariance", params, float("nan"), 0.0, 0.0, False,
                            note="degenerate crop, skipped")
            )
            continue
        reference = apply_Trho(f, steps, n_theta, has_alpha=stage.has_alpha)
        err = feature_norm(_crop(f_rot - reference, margin))
        ref = feature_norm(_crop(f, margin))
        records.append(
            CheckRecord("equivariance", params, err / max(ref, 1e-300), 0.0, 0.0, True)
        )
    return records


def equivariance_error(net: Network, image: np.ndarray, steps: int, layer: str | None = None) -> float:
    """Worst-case (or named-layer) relative equivariance error."""
    records = equivariance_records(net, image, steps)
    valid = [r for r in records if not r.note]
    if layer is not None:
        for r in records:
            if r.params["layer"] == layer:
                if r.note:
                    raise ValueError(f"{layer}: {r.note}")
                return r.lhs
        raise KeyError(layer)
    if not valid:
        raise ValueError("no layer has a non-degenerate interior crop")
    return max(r.lhs for r in valid)


def rescale_network(net: Network) -> dict[str, float]:
    """Apply the unit-A_l projection to every lift/joint layer in place."""
    before = {}
    for stage in net.conv_stages():
        layer = stage.layer
        if isinstance(layer, PlainConv):
            continue
        coeffs = net.coeffs_of(stage)
        before[stage.name] = compute_Al(coeffs, layer.basis.mu)
        layer.params["a"][...] = rescale_to_unit_Al(coeffs, layer.basis.mu).a
    return before


def layer_Al_values(net: Network) -> dict[str, float]:
    return {
        s.name: compute_Al(net.coeffs_of(s), s.layer.basis.mu)
        for s in net.conv_stages()
        if not isinstance(s.layer, PlainConv)
    }


def nonexpansiveness_check(
    net: Network, x1: np.ndarray, x2: np.ndarray, eps: float = 0.05
) -> list[CheckRecord]:
    """Proposition-2 style checks on a net whose layers satisfy A_l <= 1.

    Part (a): per-stage Lipschitz ratios along the actual trajectories,
    asserted at 1 + eps for the convolution (+ activation) stages and for
    average pooling.  Part (b): centered-norm monotonicity using the
    zero-input response for centering, on interior crops.
    """
    f1 = net.features(np.asarray(x1, dtype=np.float64))
    f2 = net.features(np.asarray(x2, dtype=np.float64))
    records = []
    prev = feature_norm(np.asarray(x1) - np.asarray(x2))
    for (stage, a), (_, b) in zip(f1, f2):
        cur = feature_norm(a - b)
        ratio = cur / max(prev, 1e-300)
        is_conv = isinstance(stage.layer, (LiftConv, JointConv))
        check_it = is_conv or stage.name.startswith(("relu", "avgpool"))
        records.append(
            CheckRecord(
                "nonexpansive",
                {"layer": stage.name},
                ratio,
                1.0 + eps,
                eps,
                ratio <= 1.0 + eps if check_it else True,
                note="" if check_it else "not asserted for this layer kind",
            )
        )
        prev = cur

    # centered-norm monotonicity (Proposition 2b)
    zero_records = net.zero_input_response()
    prev_norm = feature_norm(np.asarray(x1, dtype=np.float64))
    for (stage, a), (_, _out, const, _std) in zip(f1, zero_records):
        if const is None:
            continue
        shape = (1, -1) + (1,) * (a.ndim - 2)
        centered = a - const.reshape(shape)
        if 2 * stage.margin >= a.shape[-1]:
            continue
        cur = feature_norm(_crop(centered, stage.margin))
        check_it = isinstance(stage.layer, (LiftConv, JointConv)) or stage.name.startswith(
            ("relu", "avgpool")
        )
        records.append(
            CheckRecord(
                "centered-monotone",
                {"layer": stage.name},
                cur,
                (1.0 + eps) * prev_norm,
                eps,
                cur <= (1.0 + eps) * prev_norm if check_it else True,
                note="" if check_it else "not asserted for this layer kind",
            )
        )
        prev_norm = cur
    return records


def _downsample_field(fld: DeformationField, factor: int) -> DeformationField:
    if factor == 1:
        return fld
    tau = fld.tau
    h, w = tau.shape[1:]
    hc, wc = h - h % factor, w - w % factor
    coarse = (
        tau[:, :hc, :wc]
        .reshape(2, hc // factor, factor, wc // factor, factor)
        .mean(axis=(2, 4))
        / factor
    )
    sup_pix = float(np.sqrt((coarse**2).sum(axis=0)).max())
    return DeformationField(
        tau=coarse,
        sup_tau_pixels=sup_pix,
        sup_tau_domain=fld.sup_tau_domain,
        sup_grad=fld.sup_grad,
        satisfies_small_distortion=fld.satisfies_small_distortion,
    )


def stability_bound_check(
    net: Network,
    image: np.ndarray,
    steps: int,
    fld: DeformationField,
    c1: float = 4.0,
    c2: float = 2.0,
) -> list[CheckRecord]:
    """Deformation stability: rotation composed with a small displacement.

    Final bound: ||x_L[D_rho D_tau x] - T_rho x_L[x]|| <=
    (2 c1 L |grad tau|_inf + c2 |tau|_inf / 2^{j_L}) ||x||, with L the number
    of equivariant convolution layers and |tau|_inf / 2^{j_L} the pixel
    displacement relative to the last layer's effective filter radius.
    Also emits the per-layer intermediate bound (with D_tau acting on the
    feature grid) of 2 c1 l |grad tau|_inf ||x||.
    """
    if not fld.satisfies_small_distortion:
        return [
            CheckRecord(
                "stability",
                {"steps": steps, "grad_sup": fld.sup_grad},
                float("nan"),
                float("nan"),
                0.0,
                False,
                note="hypothesis violated: |grad tau|_inf >= 1/5, bound not asserted",
            )
        ]
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    t = 2.0 * np.pi * steps / net.n_theta
    x_def = rotate(displace(x, fld.tau), t)

    feats = net.features(x)
    feats_def = net.features(x_def)
    x0_norm = feature_norm(x)
    grad_sup = fld.sup_grad

    conv_stage_names = [s.name for s in net.conv_stages()]
    records = []
    conv_idx = 0
    last_valid = None
    for (stage, f), (_, f_def) in zip(feats, feats_def):
        if f.ndim < 4:
            continue
        if stage.name in conv_stage_names:
            conv_idx += 1
        margin = stage.margin
        if 2 * margin >= f.shape[-1]:
            continue
        factor = max(1, round(net.spec.image_size / f.shape[-1]))
        fld_l = _downsample_field(fld, factor)
        reference = apply_Trho(
            displace(f, fld_l.tau), steps, net.n_theta, has_alpha=stage.has_alpha
        )
        lhs = feature_norm(_crop(f_def - reference, margin))
        rhs = 2.0 * c1 * conv_idx * grad_sup * x0_norm
        records.append(
            CheckRecord(
                "stability-intermediate",
                {"layer": stage.name, "steps": steps, "l": conv_idx},
                lhs,
                rhs,
                0.0,
                lhs <= rhs,
            )
        )
        last_valid = (stage, f, f_def, margin)

    if last_valid is None:
        raise ValueError("no layer has a non-degenerate interior crop")
    stage, f, f_def, margin = last_valid
    reference = apply_Trho(f, steps, net.n_theta, has_alpha=stage.has_alpha)
    lhs = feature_norm(_crop(f_def - reference, margin))
    scale_last = net.conv_stages()[-1].scale
    rhs = (2.0 * c1 * len(conv_stage_names) * grad_sup
           + c2 * fld.sup_tau_pixels / scale_last) * x0_norm
    records.append(
        CheckRecord(
            "stability",
            {"layer": stage.name, "steps": steps, "grad_sup": grad_sup,
             "tau_sup_pixels": fld.sup_tau_pixels},
            lhs,
            rhs,
            0.0,
            lhs <= rhs,
        )
    )
    return records


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped_kinks: int
    per_layer: dict = field(default_factory=dict)


def gradient_check(
    net: Network,
    x: np.ndarray,
    labels: np.ndarray,
    n_samples: int = 200,
    step: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """Central finite differences against the analytic gradients.

    Samples parameter coordinates from every tensor.  Coordinates whose
    one-sided derivatives disagree (a ReLU kink or pooling argmax flip
    inside the stencil) are excluded from the comparison.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)

    def loss_only():
        logits = net.forward(x)
        loss, _ = softmax_cross_entropy(logits, labels)
        return loss

    net.zero_grads()
    loss0 = net.loss_and_grad(x, labels)
    grads = {name: g.copy() for name, g in net.named_grads()}
    params = list(net.named_params())
    n_tensors = len(params)
    worst = 0.0
    checked = skipped = 0
    per_layer: dict[str, float] = {}
    for name, p in params:
        flat = p.reshape(-1)
        quota = max(1, min(flat.size, n_samples // n_tensors))
        for i in rng.choice(flat.size, size=quota, replace=False):
            keep = flat[i]
            flat[i] = keep + step
            f_plus = loss_only()
            flat[i] = keep - step
            f_minus = loss_only()
            flat[i] = keep
            d_plus = (f_plus - loss0) / step
            d_minus = (loss0 - f_minus) / step
            if abs(d_plus - d_minus) > 1e-3 * max(abs(d_plus), abs(d_minus), 1e-8):
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * step)
            analytic = grads[name].reshape(-1)[i]
            rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8)
            per_layer[name] = max(per_layer.get(name, 0.0), rel)
            worst = max(worst, rel)
            checked += 1
    return GradCheckReport(worst, checked, skipped, per_layer)
