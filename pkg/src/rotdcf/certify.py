"""Packaged certification suites: equivariance, gradient correctness,
non-expansiveness, filter-mass bounds, deformation stability, and circular
feature alignment.  Each suite returns CheckRecord lists consumed by the CLI
report writer and by the acceptance tests.

Tolerances here are calibration constants tied to the discretization (they
come from measured interpolation and quadrature error, not from theory):
grid-exact rotations certify at 1e-3, interpolated input rotations at 5e-2,
and the rescaled-layer inequalities carry a 5% slack.
"""

from __future__ import annotations

import numpy as np

from . import arch as A
from .basis import build_angular_basis, build_fb_basis
from .filters import FilterCoeffs, compute_Al, compute_BCD
from .network import Network, circular_align
from .training import TrainConfig
from .verify import (
    CheckRecord,
    DeformationField,
    equivariance_records,
    feature_norm,
    gradient_check,
    make_deformation,
    nonexpansiveness_check,
    rescale_network,
    stability_bound_check,
)

GRID_EXACT_TOL = 1e-3
INTERPOLATED_TOL = 5e-2
CONTROL_FLOOR = 0.2
SLACK = 0.05
GRAD_TOL = 1e-4
# bilinear feature rotation on tiny maps is noise-dominated; interpolated
# angles are certified only where the interior crop is at least this wide
MIN_INTERP_CROP = 6


def smooth_test_image(size: int = 28, seed: int = 0, n_blobs: int = 5) -> np.ndarray:
    """Sum of random Gaussian bumps: smooth enough that bilinear rotation
    error stays well under the interpolated-rotation tolerance."""
    rng = np.random.default_rng(seed)
    ii, jj = np.meshgrid(np.arange(size, dtype=float), np.arange(size, dtype=float), indexing="ij")
    img = np.zeros((size, size))
    c = (size - 1) / 2.0
    for _ in range(n_blobs):
        cy, cx = c + rng.uniform(-size / 5, size / 5, size=2)
        sigma = rng.uniform(2.0, 4.0)
        amp = rng.uniform(0.3, 1.0)
        img += amp * np.exp(-((ii - cy) ** 2 + (jj - cx) ** 2) / (2 * sigma**2))
    return img.reshape(1, 1, size, size) / max(img.max(), 1e-12)


def grid_exact_steps(n_theta: int) -> list[int]:
    return [s for s in range(1, n_theta) if (4 * s) % n_theta == 0]


def interpolated_steps(n_theta: int) -> list[int]:
    return [s for s in range(1, n_theta) if (4 * s) % n_theta != 0]


def equivariance_suite(
    m: int = 8, k: int = 3, k_alpha: int = 5, n_theta: int = 8, seed: int = 0
) -> list[CheckRecord]:
    """Theorem-1 certification on a random decomposed net plus the plain-CNN
    control demonstrating that the property is not vacuous."""
    image = smooth_test_image(28, seed)
    net = Network(A.conv3_rotdcf(m=m, k=k, k_alpha=k_alpha, n_theta=n_theta), seed=seed)
    records = []
    for s in grid_exact_steps(n_theta):
        for rec in equivariance_records(net, image, s):
            if rec.note:
                records.append(rec)
                continue
            records.append(
                CheckRecord(
                    "equivariance-grid-exact", rec.params, rec.lhs, GRID_EXACT_TOL,
                    GRID_EXACT_TOL, rec.lhs < GRID_EXACT_TOL,
                )
            )
    for s in interpolated_steps(n_theta):
        for rec in equivariance_records(net, image, s):
            if rec.note:
                records.append(rec)
                continue
            if rec.params["interior"] < MIN_INTERP_CROP:
                rec.note = "crop too small for an interpolated-angle comparison"
                records.append(rec)
                continue
            records.append(
                CheckRecord(
                    "equivariance-interpolated", rec.params, rec.lhs, INTERPOLATED_TOL,
                    INTERPOLATED_TOL, rec.lhs < INTERPOLATED_TOL,
                )
            )
    control = Network(A.conv3_cnn(m=8), seed=seed)
    ctl = [
        r
        for r in equivariance_records(control, image, steps=1, n_theta=4)
        if not r.note
    ]
    worst = max(r.lhs for r in ctl)
    records.append(
        CheckRecord(
            "equivariance-control",
            {"arch": "conv3-cnn", "angle": "90deg"},
            worst, CONTROL_FLOOR, CONTROL_FLOOR, worst > CONTROL_FLOOR,
            note="plain CNN must fail the equivariance identity",
        )
    )
    return records


def tiny_mixed_net(seed: int = 0) -> Network:
    spec = A.ArchSpec(
        layers=(
            A.Lift(5, 2, 3), A.Relu(), A.AvgPool(2),
            A.Joint(5, 3, 3, 3), A.GroupNorm(), A.Relu(), A.MaxPool(2),
            A.Flatten(), A.Dense(16), A.Relu(), A.Dense(10), A.SoftmaxLoss(),
        ),
        n_theta=4,
        in_channels=1,
        image_size=9,
    )
    return Network(spec, seed=seed)


def gradcheck_suite(seed: int = 0, n_samples: int = 200) -> list[CheckRecord]:
    """Finite-difference validation across every layer type (lift, joint,
    plain conv, groupnorm, pooling, dense)."""
    rng = np.random.default_rng(seed)
    records = []

    net = tiny_mixed_net(seed)
    x = rng.standard_normal((3, 1, 9, 9))
    labels = rng.integers(0, 10, size=3)
    rep = gradient_check(net, x, labels, n_samples=n_samples, step=1e-5, seed=seed)
    records.append(
        CheckRecord(
            "gradcheck-equivariant",
            {"n_checked": rep.checked, "n_kinks_skipped": rep.skipped_kinks},
            rep.max_rel_error, GRAD_TOL, GRAD_TOL, rep.max_rel_error < GRAD_TOL,
        )
    )

    plain = Network(A.conv3_cnn(m=4, image_size=12), seed=seed)
    xp = rng.standard_normal((2, 1, 12, 12))
    lp = rng.integers(0, 10, size=2)
    rep_p = gradient_check(plain, xp, lp, n_samples=n_samples // 2, step=1e-5, seed=seed)
    records.append(
        CheckRecord(
            "gradcheck-plain",
            {"n_checked": rep_p.checked, "n_kinks_skipped": rep_p.skipped_kinks},
            rep_p.max_rel_error, GRAD_TOL, GRAD_TOL, rep_p.max_rel_error < GRAD_TOL,
        )
    )
    return records


def nonexpansiveness_suite(
    seed: int = 0, n_pairs: int = 100, m: int = 4, n_theta: int = 8
) -> list[CheckRecord]:
    """Proposition-2 certification on an A_l-rescaled random net."""
    net = Network(A.conv3_rotdcf(m=m, k=3, k_alpha=5, n_theta=n_theta), seed=seed)
    rescale_network(net)
    rng = np.random.default_rng(seed)
    worst: dict[str, CheckRecord] = {}
    for _ in range(n_pairs):
        x1, x2 = rng.standard_normal((2, 1, 1, 28, 28))
        for rec in nonexpansiveness_check(net, x1, x2, eps=SLACK):
            key = f"{rec.check}:{rec.params['layer']}"
            if key not in worst or rec.lhs > worst[key].lhs:
                worst[key] = rec
    return list(worst.values())


def bcd_suite(seed: int = 0, n_draws: int = 50, quad_factor: int = 3) -> list[CheckRecord]:
    """Filter-mass bounds B, C, 2^j D <= A_l on random coefficient draws."""
    rng = np.random.default_rng(seed)
    combos = [(5, 3), (5, 5), (15, 3), (15, 5), (15, 14)]
    records = []
    per = max(1, n_draws // len(combos))
    for size, k in combos:
        spatial = build_fb_basis(size, k)
        angular = build_angular_basis(5, 8)
        for i in range(per):
            if i % 2 == 0:
                coeffs = FilterCoeffs("lift", rng.standard_normal((2, 3, k)),
                                      np.zeros(3), scale=(size - 1) / 2)
                rep = compute_BCD(coeffs, spatial, None, quad_factor)
            else:
                coeffs = FilterCoeffs("joint", rng.standard_normal((2, 3, k, 5)),
                                      np.zeros(3), scale=(size - 1) / 2)
                rep = compute_BCD(coeffs, spatial, angular, quad_factor)
            al = compute_Al(coeffs, spatial.mu)
            bound = al * (1.0 + SLACK)
            worst = max(rep.b, rep.c, rep.d_scaled)
            records.append(
                CheckRecord(
                    "filter-mass-bounds",
                    {"L": size, "K": k, "draw": i, "kind": coeffs.layer_kind},
                    worst, bound, SLACK, worst <= bound,
                )
            )
    return records


def stability_suite(
    seed: int = 0, n_seeds: int = 20, grad_sup: float = 0.1, m: int = 4, n_theta: int = 8
) -> list[CheckRecord]:
    """Theorem-2 bound on an A_l-rescaled net over random smooth deformations."""
    records = []
    s_rot = n_theta // 4 if n_theta % 4 == 0 else 0
    for trial in range(n_seeds):
        net = Network(A.conv3_rotdcf(m=m, k=3, k_alpha=5, n_theta=n_theta), seed=seed + trial)
        rescale_network(net)
        image = smooth_test_image(28, seed + 1000 + trial)
        fld = make_deformation("smooth-random", grad_sup, seed + 2000 + trial, 28, 28)
        recs = stability_bound_check(net, image, s_rot, fld)
        for r in recs:
            r.params["trial"] = trial
        records.extend(recs)
    return records


def alignment_suite(
    m: int = 8, k: int = 3, k_alpha: int = 5, n_theta: int = 8, seed: int = 0
) -> list[CheckRecord]:
    """Circular-shift feature alignment: spatially pooled deep features of an
    image and of its rotation agree after aligning the rotation axis."""
    image = smooth_test_image(28, seed)
    net = Network(A.conv3_rotdcf(m=m, k=k, k_alpha=k_alpha, n_theta=n_theta), seed=seed)
    feats = net.features(image)
    valid = [
        (stage, f)
        for stage, f in feats
        if f.ndim == 5 and 2 * stage.margin < f.shape[-1]
    ]
    stage, f = valid[-1]

    def pooled(feature):
        h = feature.shape[-1]
        c = (h - 1) / 2.0
        ii, jj = np.meshgrid(np.arange(h), np.arange(h), indexing="ij")
        mask = (ii - c) ** 2 + (jj - c) ** 2 <= (h / 2.0 - stage.margin) ** 2
        return feature[0][:, :, mask].mean(axis=-1)  # (M, S)

    g_ref, _ = circular_align(pooled(f), axis=1)
    records = []
    for s in range(n_theta):
        t = 2.0 * np.pi * s / n_theta
        from .imageops import rotate

        f_rot = [fv for st, fv in net.features(rotate(image, t)) if st.name == stage.name][0]
        g_rot, _ = circular_align(pooled(f_rot), axis=1)
        err = feature_norm(g_rot - g_ref) / max(feature_norm(g_ref), 1e-300)
        tol = GRID_EXACT_TOL if (4 * s) % n_theta == 0 else INTERPOLATED_TOL
        records.append(
            CheckRecord(
                "circular-alignment",
                {"layer": stage.name, "steps": s},
                err, tol, tol, err < tol,
            )
        )
    return records


def full_suite(seed: int = 0, quick: bool = False) -> list[CheckRecord]:
    n_pairs = 20 if quick else 100
    n_draws = 10 if quick else 50
    n_seeds = 5 if quick else 20
    records = []
    records += equivariance_suite(seed=seed)
    records += gradcheck_suite(seed=seed, n_samples=80 if quick else 200)
    records += nonexpansiveness_suite(seed=seed, n_pairs=n_pairs)
    records += bcd_suite(seed=seed, n_draws=n_draws)
    records += stability_suite(seed=seed, n_seeds=n_seeds)
    records += alignment_suite(seed=seed)
    return records
