"""Fundamental solutions of -Delta - 1 (real part) and of -Delta in R^N.

``psi`` is the real, radial fundamental solution of the Helmholtz operator,
``lambda_fn`` the Newton kernel.  Their difference is evaluated through
``eta_nu - 1`` near the origin so it keeps full relative accuracy where the
two kernels nearly cancel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import specfun
from .errors import ConfigError, DomainError, RangeError
from .specfun import Order, gamma_fn

N_MIN, N_MAX = 3, 8


@dataclass(frozen=True)
class DimensionContext:
    """Dimension N together with its critical exponents and ball volume."""

    N: int
    two_star: float = field(init=False)
    two_plus: float = field(init=False)
    omega_N: float = field(init=False)
    nu: Order = field(init=False)

    def __post_init__(self):
        if not isinstance(self.N, (int, np.integer)) or not N_MIN <= self.N <= N_MAX:
            raise ConfigError(f"dimension must be an integer in [{N_MIN}, {N_MAX}], got {self.N!r}")
        N = int(self.N)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "two_star", 2.0 * N / (N - 2))
        object.__setattr__(self, "two_plus", 2.0 * N / (N + 2))
        object.__setattr__(self, "omega_N", 2.0 * math.pi ** (N / 2) / (N * gamma_fn(N / 2)))
        object.__setattr__(self, "nu", Order(N - 2))

    @property
    def sphere_area(self) -> float:
        """|S^{N-1}| = N omega_N."""
        return self.N * self.omega_N

    @property
    def newton_const(self) -> float:
        """N (N-2) omega_N, the normalisation of the Newton kernel."""
        return self.N * (self.N - 2) * self.omega_N


def _positive(r):
    arr = np.asarray(r, dtype=float)
    if not np.all(arr > 0.0):
        raise DomainError("radius must be positive")
    return arr, arr.ndim == 0


def _out(res, scalar):
    return float(res) if scalar else res


def psi(ctx: DimensionContext, r):
    """Psi(r) = -(1/4) (2 pi r)^{(2-N)/2} Y_{(N-2)/2}(r)."""
    arr, scalar = _positive(r)
    if ctx.N == 3:
        res = np.cos(arr) / (4.0 * math.pi * arr)
    else:
        nu = ctx.nu.value
        res = -0.25 * (2.0 * math.pi * arr) ** (-nu) * specfun.bessel_y(ctx.nu, arr)
    return _out(res, scalar)


def lambda_fn(ctx: DimensionContext, r):
    """Newton kernel r^{2-N} / (N (N-2) omega_N)."""
    arr, scalar = _positive(r)
    return _out(arr ** (2 - ctx.N) / ctx.newton_const, scalar)


def admissible_radius(ctx: DimensionContext) -> float:
    """Upper end of the interval where the difference bounds hold.

    This is the first zero of Y_{(N-4)/2} for N >= 4 and pi for N = 3.
    """
    if ctx.N == 3:
        return math.pi
    return specfun.first_zero(Order(ctx.N - 4))


def series_window(ctx: DimensionContext) -> float:
    """Radius below which Psi - Lambda is evaluated through eta - 1."""
    if ctx.N == 3:
        return math.inf
    return min(1.0, 0.9 * specfun.first_zero(ctx.nu.shift(-1)))


def _diff(ctx: DimensionContext, arr: np.ndarray) -> np.ndarray:
    if ctx.N == 3:
        # cos r - 1 = -2 sin^2(r/2)
        return -2.0 * np.sin(0.5 * arr) ** 2 / (4.0 * math.pi * arr)
    out = np.empty_like(arr)
    small = arr < series_window(ctx)
    if small.any():
        rs = arr[small]
        out[small] = rs ** (2 - ctx.N) / ctx.newton_const * specfun._eta_minus_one(ctx.nu, rs)
    big = ~small
    if big.any():
        rb = arr[big]
        out[big] = psi(ctx, rb) - lambda_fn(ctx, rb)
    return out


def psi_minus_lambda(ctx: DimensionContext, r):
    """Psi(r) - Lambda(r) without forming the two kernels separately near 0."""
    arr, scalar = _positive(r)
    res = _diff(ctx, arr.reshape(-1)).reshape(arr.shape)
    return _out(res, scalar)


def _f_m(ctx: DimensionContext, m: int, t: np.ndarray) -> np.ndarray:
    # radial coefficient functions of the Cartesian derivatives of Psi - Lambda
    nu = ctx.nu.value
    coef = (-1) ** m * 2.0**m * gamma_fn(nu + m) / gamma_fn(nu) / ctx.newton_const
    return coef * t ** (2 - ctx.N - 2 * m) * specfun._eta_minus_one(ctx.nu.shift(m), t)


def diff_radial_derivative(ctx: DimensionContext, r, order: int = 1):
    """Exact radial derivative of Psi - Lambda of order 1 or 2.

    Uses d/dr = r f_1(r) and d^2/dr^2 = r^2 f_2(r) + f_1(r), where f_m
    involves eta_{nu+m} - 1.
    """
    arr, scalar = _positive(r)
    flat = arr.reshape(-1)
    if order == 1:
        res = flat * _f_m(ctx, 1, flat)
    elif order == 2:
        res = flat**2 * _f_m(ctx, 2, flat) + _f_m(ctx, 1, flat)
    else:
        raise DomainError("only radial derivatives of order 1 and 2 are available")
    return _out(res.reshape(arr.shape), scalar)


def weight(ctx: DimensionContext, r):
    """Comparison weight for the difference bounds: r^{4-N}, |ln r| or -r."""
    arr = np.asarray(r, dtype=float)
    if ctx.N >= 5:
        return arr ** (4 - ctx.N)
    if ctx.N == 4:
        return np.abs(np.log(arr))
    return -arr


def weight_kind(ctx: DimensionContext) -> str:
    return "power" if ctx.N >= 5 else ("log" if ctx.N == 4 else "linear")


@dataclass(frozen=True)
class BoundCertificate:
    """Empirical constants sandwiching (Psi - Lambda) / w on [r_lo, r_hi]."""

    N: int
    r_lo: float
    r_hi: float
    kappa1_hat: float
    kappa2_hat: float
    weight_kind: str
    n_samples: int
    valid: bool

    def as_dict(self) -> dict:
        return {
            "N": self.N,
            "r_lo": self.r_lo,
            "r_hi": self.r_hi,
            "kappa1_hat": self.kappa1_hat,
            "kappa2_hat": self.kappa2_hat,
            "weight_kind": self.weight_kind,
            "n_samples": self.n_samples,
            "valid": self.valid,
        }


def _check_range(ctx: DimensionContext, r_lo: float, r_hi: float) -> None:
    if not 0.0 < r_lo < r_hi:
        raise RangeError(f"need 0 < r_lo < r_hi, got ({r_lo}, {r_hi})")
    r_max = admissible_radius(ctx)
    if r_hi >= r_max:
        raise RangeError(f"r_hi = {r_hi} must stay below {r_max:.10f} for N = {ctx.N}")


def weighted_ratio(ctx: DimensionContext, r):
    return psi_minus_lambda(ctx, r) / weight(ctx, r)


def certify_difference_bounds(ctx: DimensionContext, r_lo: float, r_hi: float, n_samples: int = 1000) -> BoundCertificate:
    """Empirical inf/sup of (Psi - Lambda)/w over a log-spaced sample."""
    _check_range(ctx, r_lo, r_hi)
    if n_samples < 2:
        raise RangeError("n_samples must be at least 2")
    r = np.geomspace(r_lo, r_hi, n_samples)
    if ctx.N == 4:
        r = r[np.abs(np.log(r)) > 0.0]
    ratio = weighted_ratio(ctx, r)
    k1, k2 = float(np.min(ratio)), float(np.max(ratio))
    return BoundCertificate(
        N=ctx.N,
        r_lo=float(r_lo),
        r_hi=float(r_hi),
        kappa1_hat=k1,
        kappa2_hat=k2,
        weight_kind=weight_kind(ctx),
        n_samples=int(r.size),
        valid=bool(0.0 < k1 <= k2 and np.all(np.isfinite(ratio))),
    )


def richardson_derivative(fn, r: np.ndarray, order: int, rel_step: float = 1e-2) -> np.ndarray:
    """Central differences at steps h and h/2, combined by Richardson extrapolation."""
    r = np.asarray(r, dtype=float)

    def central(h):
        if order == 1:
            return (fn(r + h) - fn(r - h)) / (2.0 * h)
        return (fn(r + h) - 2.0 * fn(r) + fn(r - h)) / (h * h)

    h = rel_step * r
    d1 = central(h)
    d2 = central(0.5 * h)
    d3 = central(0.25 * h)
    # two Richardson levels for an O(h^2) error expansion in even powers
    e1 = (4.0 * d2 - d1) / 3.0
    e2 = (4.0 * d3 - d2) / 3.0
    return (16.0 * e2 - e1) / 15.0


def derivative_bound_check(ctx: DimensionContext, alpha_order: int, r_grid) -> dict:
    """Weighted sup of the radial derivative of Psi - Lambda on a grid.

    The weight r^{N-4+|alpha|} makes the quantity bounded when the derivative
    bound holds.  Derivatives are finite differences of ``psi_minus_lambda``.
    """
    if alpha_order not in (1, 2):
        raise DomainError("alpha_order must be 1 or 2")
    r = np.asarray(r_grid, dtype=float)
    r_max = admissible_radius(ctx)
    if r.size == 0 or np.any(r <= 0.0) or np.any(r * 1.01 >= r_max):
        raise RangeError(f"grid must lie inside (0, {r_max:.6f})")
    d = richardson_derivative(lambda x: psi_minus_lambda(ctx, x), r, alpha_order)
    weighted = np.abs(d) * r ** (ctx.N - 4 + alpha_order)
    return {
        "N": ctx.N,
        "alpha_order": alpha_order,
        "r_min": float(r.min()),
        "r_max": float(r.max()),
        "n": int(r.size),
        "sup_weighted": float(np.max(weighted)),
        "finite": bool(np.all(np.isfinite(weighted))),
        "derivatives": d,
    }


def tabulate(ctx: DimensionContext, r) -> dict[str, np.ndarray]:
    """Columns r, psi, lambda, diff, weighted_ratio for CSV output."""
    r = np.asarray(r, dtype=float)
    diff = psi_minus_lambda(ctx, r)
    w = weight(ctx, r)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(w != 0.0, diff / w, np.nan)
    return {
        "r": r,
        "psi": psi(ctx, r),
        "lambda": lambda_fn(ctx, r),
        "diff": diff,
        "weighted_ratio": ratio,
    }
