import numpy as np
import pytest

from rotdcf.basis import build_angular_basis, build_fb_basis, steering_matrix, synthesize_filter
from rotdcf.filters import (
    BCDReport,
    FilterCoeffs,
    compute_Al,
    compute_BCD,
    fb_norm,
    rescale_to_unit_Al,
    rotation_slice_coeffs,
    synthesize_bank,
)

N_THETA = 8


def _random_joint(rng, m_prev=2, m_out=3, k=3, k_alpha=3, scale=2.0):
    a = rng.standard_normal((m_prev, m_out, k, k_alpha))
    return FilterCoeffs("joint", a, bias=np.zeros(m_out), scale=scale)


def _random_lift(rng, m_prev=1, m_out=2, k=3, scale=2.0):
    a = rng.standard_normal((m_prev, m_out, k))
    return FilterCoeffs("lift", a, bias=np.zeros(m_out), scale=scale)


def test_coeff_shape_validation():
    with pytest.raises(ValueError):
        FilterCoeffs("lift", np.zeros((1, 2, 3, 4)), bias=np.zeros(2))
    with pytest.raises(ValueError):
        FilterCoeffs("joint", np.zeros((1, 2, 3)), bias=np.zeros(2))
    with pytest.raises(ValueError):
        FilterCoeffs("lift", np.full((1, 2, 3), np.nan), bias=np.zeros(2))
    with pytest.raises(ValueError):
        FilterCoeffs("lift", np.zeros((1, 2, 3)), bias=np.zeros(5))


def test_rotation_invariant_coeffs_give_identical_slices():
    spatial = build_fb_basis(5, 3)
    angular = build_angular_basis(3, N_THETA)
    a = np.zeros((1, 1, 3, 3))
    a[0, 0, 0, 0] = 1.3  # radial spatial function, constant angular row
    bank = synthesize_bank(FilterCoeffs("joint", a, np.zeros(1)), spatial, angular, N_THETA)
    for s in range(1, N_THETA):
        assert np.allclose(bank.w[:, :, s], bank.w[:, :, 0])


def test_zero_coeffs_zero_bank():
    spatial = build_fb_basis(5, 3)
    bank = synthesize_bank(
        FilterCoeffs("lift", np.zeros((2, 2, 3)), np.zeros(2)), spatial, None, N_THETA
    )
    assert np.all(bank.w == 0.0)


def test_bank_slices_satisfy_steering_identity():
    rng = np.random.default_rng(3)
    spatial = build_fb_basis(9, 6)
    angular = build_angular_basis(5, N_THETA)
    coeffs = FilterCoeffs("joint", rng.standard_normal((2, 2, 6, 5)), np.zeros(2))
    bank = synthesize_bank(coeffs, spatial, angular, N_THETA)
    for s in range(N_THETA):
        cs = rotation_slice_coeffs(coeffs, spatial, s, N_THETA)
        expect = np.einsum("cmkr,kxy,rb->cmbxy", cs, spatial.samples, angular.samples)
        assert np.abs(bank.w[:, :, s] - expect).max() < 1e-12
    # slice s as a function equals slice 0 steered by the inverse angle
    rng_c = rng.standard_normal(6)
    f0 = synthesize_filter(spatial, rng_c)
    for s in range(N_THETA):
        rot = steering_matrix(spatial, -2 * np.pi * s / N_THETA)
        fs = synthesize_filter(spatial, rot @ rng_c)
        assert fs.shape == f0.shape


def test_bank_shape_mismatch():
    spatial = build_fb_basis(5, 3)
    angular = build_angular_basis(3, N_THETA)
    bad = FilterCoeffs("joint", np.zeros((1, 1, 5, 3)), np.zeros(1))
    with pytest.raises(ValueError):
        synthesize_bank(bad, spatial, angular, N_THETA)
    bad2 = FilterCoeffs("joint", np.zeros((1, 1, 3, 4)), np.zeros(1))
    with pytest.raises(ValueError):
        synthesize_bank(bad2, spatial, angular, N_THETA)


def test_fb_norm_single_entry():
    mu = np.array([2.0, 5.0, 5.0])
    block = np.zeros((3, 4))
    block[1, 2] = -1.5
    assert fb_norm(block, mu) == pytest.approx(np.sqrt(5.0) * 1.5, rel=1e-14)


def test_fb_norm_zero_and_homogeneous():
    mu = np.array([2.0, 5.0, 5.0])
    assert fb_norm(np.zeros(3), mu) == 0.0
    rng = np.random.default_rng(0)
    block = rng.standard_normal((3, 2))
    assert fb_norm(3.7 * block, mu) == pytest.approx(3.7 * fb_norm(block, mu), rel=1e-12)


def test_Al_single_channel_is_pi_fbnorm():
    rng = np.random.default_rng(1)
    spatial = build_fb_basis(5, 3)
    a = rng.standard_normal((1, 1, 3))
    coeffs = FilterCoeffs("lift", a, np.zeros(1))
    assert compute_Al(coeffs, spatial.mu) == pytest.approx(
        np.pi * fb_norm(a[0, 0], spatial.mu), rel=1e-12
    )


def test_Al_homogeneous():
    rng = np.random.default_rng(2)
    spatial = build_fb_basis(5, 6)
    coeffs = _random_joint(rng, k=6, k_alpha=4)
    doubled = FilterCoeffs("joint", 2.0 * coeffs.a, coeffs.bias)
    assert compute_Al(doubled, spatial.mu) == pytest.approx(
        2.0 * compute_Al(coeffs, spatial.mu), rel=1e-12
    )


def test_rescale_gives_unit_Al_and_is_idempotent():
    rng = np.random.default_rng(3)
    spatial = build_fb_basis(5, 6)
    coeffs = _random_joint(rng, k=6, k_alpha=4)
    coeffs = FilterCoeffs("joint", coeffs.a, rng.standard_normal(coeffs.m_out))
    once = rescale_to_unit_Al(coeffs, spatial.mu)
    assert compute_Al(once, spatial.mu) == pytest.approx(1.0, abs=1e-12)
    twice = rescale_to_unit_Al(once, spatial.mu)
    assert np.allclose(once.a, twice.a, atol=1e-15)
    assert np.array_equal(once.bias, coeffs.bias)


def test_rescale_zero_layer_errors():
    with pytest.raises(ValueError):
        rescale_to_unit_Al(
            FilterCoeffs("lift", np.zeros((1, 1, 3)), np.zeros(1)),
            build_fb_basis(5, 3).mu,
        )


def test_bcd_zero_filter():
    spatial = build_fb_basis(5, 3)
    rep = compute_BCD(FilterCoeffs("lift", np.zeros((1, 1, 3)), np.zeros(1)), spatial, None, 2)
    assert rep == BCDReport(0.0, 0.0, 0.0, 0.0)


@pytest.mark.parametrize("size,k", [(5, 3), (5, 5), (15, 3), (15, 5), (15, 14)])
def test_bcd_dominated_by_Al(size, k):
    rng = np.random.default_rng(size * 100 + k)
    spatial = build_fb_basis(size, k)
    angular = build_angular_basis(5, N_THETA)
    slack = 1.05
    for trial in range(10):
        if trial % 2 == 0:
            coeffs = FilterCoeffs(
                "lift", rng.standard_normal((2, 3, k)), np.zeros(3), scale=2.0
            )
            rep = compute_BCD(coeffs, spatial, None, 3)
        else:
            coeffs = FilterCoeffs(
                "joint", rng.standard_normal((2, 3, k, 5)), np.zeros(3), scale=2.0
            )
            rep = compute_BCD(coeffs, spatial, angular, 3)
        al = compute_Al(coeffs, spatial.mu)
        assert rep.b <= al * slack
        assert rep.c <= al * slack
        assert rep.d_scaled <= al * slack
        assert rep.d == pytest.approx(rep.d_scaled / coeffs.scale, rel=1e-12)


def test_bcd_quadrature_convergence():
    rng = np.random.default_rng(9)
    spatial = build_fb_basis(5, 5)
    angular = build_angular_basis(3, N_THETA)
    coeffs = FilterCoeffs("joint", rng.standard_normal((1, 2, 5, 3)), np.zeros(2))
    # midpoint quadrature on |.| converges like 1/q (boundary cells dominate),
    # so the sub-1% doubling regime starts around q=8
    lo = compute_BCD(coeffs, spatial, angular, 8)
    hi = compute_BCD(coeffs, spatial, angular, 16)
    for name in ("b", "c", "d_scaled"):
        a, b = getattr(lo, name), getattr(hi, name)
        assert abs(a - b) / max(abs(b), 1e-30) < 0.01
