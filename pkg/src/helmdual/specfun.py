"""Gamma and Bessel functions of the second kind for integer and half-integer order.

Half-integer orders are built from the closed forms of Y_{-1/2} and Y_{1/2}
by upward recurrence.  Integer orders use the ascending (logarithmic) series
below ``SWITCH`` and the Hankel asymptotic expansion of Y_0, Y_1 above it,
again followed by upward recurrence, which is stable for Y.

Everything here accepts scalars or numpy arrays for the argument ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, UnsupportedOrderError

EULER_GAMMA = 0.57721566490153286061
SWITCH = 12.0
NU_MAX = 8.0
ETA_SERIES_MAX = 2.0
_TINY = 1e-17


@dataclass(frozen=True)
class Order:
    """Bessel order stored exactly as twice its value."""

    twice: int

    def __post_init__(self):
        if self.twice < -1 or self.twice > 2 * NU_MAX:
            raise UnsupportedOrderError(f"order {self.twice / 2} outside [-1/2, {NU_MAX}]")

    @property
    def value(self) -> float:
        return self.twice / 2.0

    @property
    def is_integer(self) -> bool:
        return self.twice % 2 == 0

    def shift(self, k: int) -> "Order":
        return Order(self.twice + 2 * k)

    @classmethod
    def of(cls, nu) -> "Order":
        if isinstance(nu, Order):
            return nu
        twice = 2.0 * float(nu)
        rounded = int(round(twice))
        if abs(twice - rounded) > 1e-12:
            raise UnsupportedOrderError(f"order {nu} is not a multiple of 1/2")
        return cls(rounded)


def gamma_fn(x: float) -> float:
    """Gamma function; exact factorial forms at integers and half-integers."""
    x = float(x)
    if not x > 0.0 or not math.isfinite(x):
        raise DomainError(f"gamma_fn needs x > 0, got {x}")
    twice = 2.0 * x
    if twice == round(twice) and x < 170.0:
        if x == round(x):
            return float(math.factorial(int(x) - 1))
        n = int(x - 0.5)
        # Gamma(n + 1/2) = (2n)! sqrt(pi) / (4^n n!)
        return math.factorial(2 * n) / (4.0**n * math.factorial(n)) * math.sqrt(math.pi)
    return math.gamma(x)


def _as_array(t):
    arr = np.asarray(t, dtype=float)
    return arr, arr.ndim == 0


def _digamma_int(m: int) -> float:
    """psi(m) for a positive integer m."""
    return -EULER_GAMMA + sum(1.0 / j for j in range(1, m))


def _y_half(twice: int, t: np.ndarray) -> np.ndarray:
    amp = np.sqrt(2.0 / (np.pi * t))
    y_lo = amp * np.sin(t)  # Y_{-1/2}
    if twice == -1:
        return y_lo
    y_hi = -amp * np.cos(t)  # Y_{1/2}
    nu = 0.5
    while 2 * nu < twice:
        y_lo, y_hi = y_hi, (2.0 * nu / t) * y_hi - y_lo
        nu += 1.0
    return y_hi


def _y_int_series(n: int, t: np.ndarray) -> np.ndarray:
    z = 0.5 * t
    out = np.zeros_like(t)
    for k in range(n):
        out -= math.factorial(n - k - 1) / math.factorial(k) * z ** (2 * k - n) / np.pi
    two_log_z = 2.0 * np.log(z)
    c = z**n / math.factorial(n)
    psi_a = -EULER_GAMMA
    psi_b = _digamma_int(n + 1)
    k = 0
    while True:
        term = c * (two_log_z - psi_a - psi_b)
        out += term / np.pi
        k += 1
        c = c * (-(z * z)) / (k * (n + k))
        psi_a += 1.0 / k
        psi_b += 1.0 / (n + k)
        if k > 4 and np.all(np.abs(c) * (np.abs(two_log_z) + 10.0) <= _TINY * np.maximum(1.0, np.abs(out))):
            break
        if k > 200:
            break
    return out


def _y_hankel(nu: float, t: np.ndarray) -> np.ndarray:
    """Hankel asymptotic expansion, truncated at the smallest term."""
    mu = 4.0 * nu * nu
    p = np.zeros_like(t)
    q = np.zeros_like(t)
    a = np.ones_like(t)
    active = np.ones(t.shape, dtype=bool)
    prev = np.full(t.shape, np.inf)
    for k in range(0, 80):
        if k > 0:
            a = a * (mu - (2 * k - 1) ** 2) / (k * 8.0 * t)
        mag = np.abs(a)
        active &= mag < prev
        prev = np.where(active, mag, prev)
        sign = -1.0 if (k // 2) % 2 else 1.0
        contrib = np.where(active, sign * a, 0.0)
        if k % 2 == 0:
            p += contrib
        else:
            q += contrib
        active &= mag > _TINY * 1e-3
        if not active.any():
            break
    chi = t - (0.5 * nu + 0.25) * np.pi
    return np.sqrt(2.0 / (np.pi * t)) * (p * np.sin(chi) + q * np.cos(chi))


def _y_int(n: int, t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    small = t < SWITCH
    if small.any():
        out[small] = _y_int_series(n, t[small])
    big = ~small
    if big.any():
        tb = t[big]
        y0 = _y_hankel(0.0, tb)
        if n == 0:
            out[big] = y0
        else:
            y1 = _y_hankel(1.0, tb)
            for k in range(1, n):
                y0, y1 = y1, (2.0 * k / tb) * y1 - y0
            out[big] = y1
    return out


def bessel_y(nu, t):
    """Bessel function of the second kind Y_nu(t) for t > 0.

    ``nu`` must be a multiple of 1/2 in [-1/2, NU_MAX].
    """
    order = Order.of(nu)
    arr, scalar = _as_array(t)
    if not np.all(arr > 0.0):
        raise DomainError("bessel_y needs t > 0")
    flat = arr.reshape(-1)
    if order.is_integer:
        res = _y_int(order.twice // 2, flat)
    else:
        res = _y_half(order.twice, flat)
    res = res.reshape(arr.shape)
    return float(res) if scalar else res


@lru_cache(maxsize=None)
def _first_zero(twice: int) -> float:
    step = 0.01
    a = step
    fa = bessel_y(Order(twice), a)
    while True:
        b = a + step
        fb = bessel_y(Order(twice), b)
        if fa < 0.0 <= fb:
            break
        a, fa = b, fb
    for _ in range(200):
        mid = 0.5 * (a + b)
        fm = bessel_y(Order(twice), mid)
        if fm < 0.0:
            a = mid
        else:
            b = mid
        if b - a < 1e-14:
            break
    return 0.5 * (a + b)


def first_zero(nu) -> float:
    """First positive zero y_nu of Y_nu, by bracketing and bisection."""
    order = Order.of(nu)
    if order.twice < 0:
        raise UnsupportedOrderError("first_zero is defined for nu >= 0")
    return _first_zero(order.twice)


def c_nu(nu) -> float:
    """Normalisation pi / (2^nu Gamma(nu)) making eta_nu(0) = 1."""
    v = Order.of(nu).value
    return math.pi / (2.0**v * gamma_fn(v))


def _eta_m1_series_half(nu: float, t: np.ndarray) -> np.ndarray:
    # eta_nu(t) = sum_k (t^2/4)^k / (k! prod_{j<=k} (nu - j)) for half-integer nu
    x = 0.25 * t * t
    term = np.ones_like(t)
    out = np.zeros_like(t)
    for k in range(1, 200):
        term = term * x / (k * (nu - k))
        out += term
        if k > nu + 2 and np.all(np.abs(term) <= _TINY * np.abs(out)):
            break
    return out


def _eta_m1_series_int(n: int, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    pos = t > 0.0
    if not pos.any():
        return out
    z = 0.5 * t[pos]
    acc = np.zeros_like(z)
    for k in range(1, n):
        acc += math.factorial(n - k - 1) / math.factorial(k) * z ** (2 * k)
    two_log_z = 2.0 * np.log(z)
    c = z ** (2 * n) / math.factorial(n)
    psi_a = -EULER_GAMMA
    psi_b = _digamma_int(n + 1)
    for k in range(0, 200):
        acc += c * (psi_a + psi_b - two_log_z)
        c = c * (-(z * z)) / ((k + 1) * (n + k + 1))
        psi_a += 1.0 / (k + 1)
        psi_b += 1.0 / (n + k + 1)
        if k > 2 and np.all(np.abs(c) * (np.abs(two_log_z) + 10.0) <= _TINY * np.abs(acc)):
            break
    out[pos] = acc / math.factorial(n - 1)
    return out


def _eta_minus_one(order: Order, t: np.ndarray) -> np.ndarray:
    """eta_nu(t) - 1 without cancellation; no domain checks."""
    out = np.empty_like(t)
    small = t <= ETA_SERIES_MAX
    if small.any():
        ts = t[small]
        if order.is_integer:
            out[small] = _eta_m1_series_int(order.twice // 2, ts)
        else:
            out[small] = _eta_m1_series_half(order.value, ts)
    big = ~small
    if big.any():
        tb = t[big]
        nu = order.value
        out[big] = -c_nu(order) * tb**nu * bessel_y(order, tb) - 1.0
    return out


def eta_minus_one(nu, t):
    """eta_nu(t) - 1, accurate for small t where eta_nu(t) is close to 1."""
    order = Order.of(nu)
    if order.value < 1.0:
        raise DomainError("eta is defined for nu >= 1")
    arr, scalar = _as_array(t)
    if not np.all(arr >= 0.0):
        raise DomainError("eta needs t >= 0")
    res = _eta_minus_one(order, arr.reshape(-1)).reshape(arr.shape)
    return float(res) if scalar else res


def eta(nu, t):
    """eta_nu(t) = -c_nu t^nu Y_nu(t), continued by eta_nu(0) = 1 (nu >= 1)."""
    res = eta_minus_one(nu, t)
    return res + 1.0
