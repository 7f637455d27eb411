import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helmdual import specfun
from helmdual.errors import DomainError, UnsupportedOrderError
from helmdual.specfun import Order, bessel_y, eta, eta_minus_one, first_zero, gamma_fn

ORDERS = [k / 2 for k in range(-1, 17)]


def mp_y(nu, t):
    return float(mpmath.bessely(mpmath.mpf(nu), mpmath.mpf(t)))


def envelope(nu, t):
    # scale of |Y_nu| that does not vanish at zeros of Y_nu
    return math.hypot(mp_y(nu, t), float(mpmath.besselj(nu, t)))


# gamma -----------------------------------------------------------------------


@pytest.mark.parametrize("x,expected", [(1.0, 1.0), (0.5, math.sqrt(math.pi)), (4.0, 6.0), (4.5, 11.631728396567448)])
def test_gamma_known_values(x, expected):
    assert gamma_fn(x) == pytest.approx(expected, rel=1e-14)


@given(st.floats(0.05, 30.0))
def test_gamma_matches_mpmath(x):
    assert gamma_fn(x) == pytest.approx(float(mpmath.gamma(x)), rel=1e-13)


def test_gamma_rejects_poles():
    with pytest.raises(DomainError):
        gamma_fn(0.0)
    with pytest.raises(DomainError):
        gamma_fn(-2.0)


# orders ----------------------------------------------------------------------


def test_order_storage_and_validation():
    assert Order.of(1.5) == Order(3)
    assert Order.of(2).is_integer and not Order.of(2.5).is_integer
    with pytest.raises(UnsupportedOrderError):
        Order.of(0.3)
    with pytest.raises(UnsupportedOrderError):
        Order.of(specfun.NU_MAX + 0.5)
    with pytest.raises(UnsupportedOrderError):
        Order.of(-1)


# Y_nu ------------------------------------------------------------------------


@pytest.mark.parametrize("nu", ORDERS)
@pytest.mark.parametrize("t", [1e-3, 0.1, 0.9, 2.0, 7.5, 11.9, 12.1, 20.0, 55.0, 300.0])
def test_bessel_y_matches_mpmath(nu, t):
    assert abs(bessel_y(nu, t) - mp_y(nu, t)) <= 1e-10 * envelope(nu, t) + 1e-300


@given(st.sampled_from(ORDERS), st.floats(0.05, 80.0))
def test_bessel_y_random_points(nu, t):
    assert abs(bessel_y(nu, t) - mp_y(nu, t)) <= 1e-9 * envelope(nu, t)


def test_bessel_y_array_and_scalar():
    t = np.array([0.5, 1.0, 2.0])
    vals = bessel_y(1, t)
    assert isinstance(vals, np.ndarray) and vals.shape == (3,)
    assert isinstance(bessel_y(1, 1.0), float)
    assert vals[1] == bessel_y(1, 1.0)


def test_bessel_y_domain_errors():
    with pytest.raises(DomainError):
        bessel_y(0, 0.0)
    with pytest.raises(DomainError):
        bessel_y(0, np.array([1.0, -1.0]))
    with pytest.raises(UnsupportedOrderError):
        bessel_y(0.25, 1.0)


def test_half_order_zero_at_half_pi():
    assert abs(bessel_y(0.5, math.pi / 2)) < 1e-16


def test_small_argument_leading_terms():
    t = 1e-8
    assert t * bessel_y(1, t) == pytest.approx(-2 / math.pi, rel=1e-12)
    assert bessel_y(0, t) / math.log(2 / t) == pytest.approx(-2 / math.pi, rel=0.05)


@given(st.sampled_from([k / 2 for k in range(1, 15)]), st.floats(0.1, 40.0))
def test_recurrence(nu, t):
    lhs = bessel_y(nu + 1, t) + bessel_y(nu - 1, t)
    rhs = 2 * nu / t * bessel_y(nu, t)
    scale = abs(bessel_y(nu + 1, t)) + abs(bessel_y(nu - 1, t)) + abs(rhs)
    assert abs(lhs - rhs) <= 1e-11 * scale


@pytest.mark.parametrize("nu", [0.5, 1, 1.5, 2, 3])
def test_derivative_identity(nu):
    # d/dt [t^nu Y_nu(t)] = t^nu Y_{nu-1}(t), against central differences
    rng = np.random.default_rng(7)
    t = rng.uniform(0.1, 20.0, 100)
    h = 1e-5 * t
    g = lambda x: x**nu * bessel_y(nu, x)
    fd = (g(t + h) - g(t - h)) / (2 * h)
    exact = t**nu * bessel_y(nu - 1, t)
    scale = t**nu * np.hypot(bessel_y(nu - 1, t), [float(mpmath.besselj(nu - 1, x)) for x in t])
    assert np.max(np.abs(fd - exact) / scale) < 1e-6


@pytest.mark.parametrize("n", [0, 1])
def test_series_and_hankel_branches_agree(n):
    t = np.linspace(specfun.SWITCH - 1.0, specfun.SWITCH + 1.0, 41)
    series = specfun._y_int_series(n, t)
    hank = specfun._y_hankel(float(n), t)
    assert np.max(np.abs(series - hank)) < 1e-9


# first zero --------------------------------------------------------------------


def test_first_zero_half_order():
    assert first_zero(0.5) == pytest.approx(math.pi / 2, abs=1e-10)


def test_first_zero_order_zero():
    y0 = first_zero(0)
    assert y0 == pytest.approx(float(mpmath.besselyzero(0, 1)), abs=1e-10)
    assert y0 == pytest.approx(0.8935769663, abs=1e-10)
    assert y0 < 1.0


@pytest.mark.parametrize("nu", [0, 0.5, 1, 1.5, 2, 2.5, 3])
def test_first_zero_matches_mpmath_and_is_ordered(nu):
    z = first_zero(nu)
    if float(nu).is_integer():
        assert z == pytest.approx(float(mpmath.besselyzero(int(nu), 1)), abs=1e-10)
    else:
        assert abs(mp_y(nu, z)) < 1e-10
    assert first_zero(nu) < first_zero(nu + 1)


def test_first_zero_rejects_negative_order():
    with pytest.raises(UnsupportedOrderError):
        first_zero(-0.5)


# eta -------------------------------------------------------------------------


def test_eta_at_zero():
    assert eta(1.5, 0.0) == 1.0
    assert eta(3, 0.0) == 1.0


@given(st.floats(0.0, 10.0))
def test_eta_three_halves_closed_form(t):
    assert eta(1.5, t) == pytest.approx(math.cos(t) + t * math.sin(t), rel=1e-11, abs=1e-13)


def test_eta_three_halves_at_half_pi():
    assert eta(1.5, math.pi / 2) == pytest.approx(math.pi / 2, rel=1e-13)


def test_eta_rejects_small_orders():
    with pytest.raises(DomainError):
        eta(0.5, 1.0)
    with pytest.raises(DomainError):
        eta(1, -1.0)


@pytest.mark.parametrize("nu", [1, 1.5, 2, 2.5, 3, 4])
def test_eta_matches_definition(nu):
    t = np.linspace(0.05, 6.0, 60)
    ref = np.array([-float(mpmath.pi / (2**nu * mpmath.gamma(nu))) * x**nu * mp_y(nu, x) for x in t])
    assert np.max(np.abs(eta(nu, t) - ref)) < 1e-10


@pytest.mark.parametrize("nu", [1, 1.5, 2, 3, 4])
def test_eta_increasing_before_first_zero(nu):
    t = np.linspace(1e-3, first_zero(nu - 1), 2001)[:-1]
    assert np.all(np.diff(eta(nu, t)) > 0.0)


@pytest.mark.parametrize("nu", [1.5, 2, 2.5, 3, 4])
def test_eta_quadratic_limit(nu):
    # (eta - 1)/t^2 -> 1/(4 (nu - 1)); Richardson on t and t/2 removes the next order
    t = 1e-3
    q1 = eta_minus_one(nu, t) / t**2
    q2 = eta_minus_one(nu, t / 2) / (t / 2) ** 2
    limit = (4 * q2 - q1) / 3 if nu > 2 else q2
    assert limit == pytest.approx(1 / (4 * (nu - 1)), rel=1e-4)


def test_eta_minus_one_is_cancellation_free():
    t = 1e-7
    assert eta_minus_one(1.5, t) == pytest.approx(t * t / 2 - t**4 / 8, rel=1e-10)


@pytest.mark.parametrize("nu", [0.0, 1.0, 1.5])
def test_large_t_gap_is_first_hankel_correction(nu):
    t = 50.0
    ref = float(mpmath.bessely(nu, t))
    assert abs(bessel_y(nu, t) - ref) < 1e-12
    chi = t - nu * math.pi / 2 - math.pi / 4
    mu = 4 * nu * nu
    amp = math.sqrt(2 / (math.pi * t))
    two_term = amp * (math.sin(chi) + (mu - 1) / (8 * t) * math.cos(chi))
    # the remainder after the correction is O(t^-2) of the envelope
    assert abs(ref - two_term) / amp < 1e-3 * abs(mu - 1) / (8 * t) + 1e-4
