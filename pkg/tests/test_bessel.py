import mpmath
import numpy as np
import pytest

from rotdcf.bessel import bessel_j, bessel_j_deriv, bessel_zeros


def _oracle_jm(order, x, terms=120):
    """Truncated power series for J_order evaluated in 50-digit arithmetic."""
    with mpmath.workdps(50):
        x = mpmath.mpf(x)
        half = x / 2
        term = half**order / mpmath.factorial(order)
        total = term
        for j in range(1, terms):
            term = -term * half * half / (j * (order + j))
            total += term
        return total


def _oracle_zero(order, lo, hi):
    """Bisection on the series oracle."""
    with mpmath.workdps(50):
        f_lo = _oracle_jm(order, lo)
        for _ in range(120):
            mid = (lo + hi) / 2
            f_mid = _oracle_jm(order, mid)
            if f_lo * f_mid <= 0:
                hi = mid
            else:
                lo, f_lo = mid, f_mid
        return float((lo + hi) / 2)


# Expected values frozen from the series oracle above.
J0_FIRST_ZERO = 2.404825557695773
J1_FIRST_ZERO = 3.831705970207512
J0_SECOND_ZERO = 5.520078110286311


def test_first_zero_j0():
    assert bessel_zeros(0, 1)[0] == pytest.approx(J0_FIRST_ZERO, abs=1e-12)


def test_first_zero_j1():
    assert bessel_zeros(1, 1)[0] == pytest.approx(J1_FIRST_ZERO, abs=1e-12)


def test_second_zero_j0():
    assert bessel_zeros(0, 2)[1] == pytest.approx(J0_SECOND_ZERO, abs=1e-12)


@pytest.mark.parametrize("order", range(9))
def test_zeros_match_series_oracle(order):
    zeros = bessel_zeros(order, 5)
    for z in zeros:
        ref = _oracle_zero(order, z - 0.5, z + 0.5)
        assert abs(z - ref) < 1e-10


def test_zeros_ascending():
    for order in (0, 3, 8, 17):
        zeros = bessel_zeros(order, 6)
        assert all(a < b for a, b in zip(zeros, zeros[1:]))


def test_interlacing_j0_j1():
    z0 = bessel_zeros(0, 6)
    z1 = bessel_zeros(1, 6)
    for k in range(5):
        assert z0[k] < z1[k] < z0[k + 1]


def test_domain_errors():
    with pytest.raises(ValueError):
        bessel_zeros(-1, 1)
    with pytest.raises(ValueError):
        bessel_zeros(65, 1)
    with pytest.raises(ValueError):
        bessel_zeros(0, 0)
    with pytest.raises(ValueError):
        bessel_zeros(0, 65)


def test_extreme_supported_range():
    zeros = bessel_zeros(64, 64)
    assert len(zeros) == 64
    # high-order, high-index zero against mpmath's own root finder
    ref = float(mpmath.besseljzero(64, 64))
    assert zeros[-1] == pytest.approx(ref, abs=1e-11)


def test_eval_against_series_small_x():
    for order in (0, 1, 4):
        for x in (0.1, 0.9, 1.7):
            assert bessel_j(order, x) == pytest.approx(float(_oracle_jm(order, x)), abs=1e-14)


def test_eval_against_mpmath_large_x():
    for order in (0, 2, 10, 40):
        for x in (5.0, 30.0, 120.0):
            ref = float(mpmath.besselj(order, x))
            assert bessel_j(order, x) == pytest.approx(ref, abs=1e-13)


def test_deriv_matches_mpmath():
    for order in (0, 1, 5):
        for x in (0.5, 3.3, 17.0):
            ref = float(mpmath.besselj(order, x, derivative=1))
            assert bessel_j_deriv(order, x) == pytest.approx(ref, abs=1e-12)


def test_vectorized_eval():
    xs = np.linspace(0.0, 25.0, 101)
    vals = bessel_j(3, xs)
    assert vals.shape == xs.shape
    assert vals[0] == 0.0
    for i in (7, 40, 100):
        assert vals[i] == pytest.approx(float(mpmath.besselj(3, xs[i])), abs=1e-13)
