"""Dual energy functional, Birman-Schwinger operator and the threshold level.

Fields are either ``RadialFunction`` objects (radial quadrature backend) or
Cartesian fields from ``helmdual.solver``.  Both expose ``values``,
``weights`` and ``with_values``; the Cartesian one additionally knows how to
apply the resolvent on its own grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from . import radialops as ro
from .errors import ConfigError, DomainError, PreconditionError, ProjectionError
from .fundsol import DimensionContext

KINDS = ("constant", "radial_profile", "cartesian_samples")


@dataclass(frozen=True)
class Coefficient:
    """Nonnegative coefficient Q with its sup norm.

    ``fn`` maps radii (for ``constant`` / ``radial_profile``) or points of
    shape (..., N) (for ``cartesian_samples``) to values.  ``components``
    optionally holds the pair (Q_per, Q_0) with Q = Q_per + Q_0.
    """

    kind: str
    sup_norm: float
    fn: Callable = field(compare=False)
    components: tuple | None = field(default=None, compare=False)
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown coefficient kind {self.kind!r}")
        if not (self.sup_norm > 0.0 and math.isfinite(self.sup_norm)):
            raise DomainError("coefficient needs a positive finite sup norm")
        if self.kind != "cartesian_samples":
            probe = np.concatenate([[0.0], np.geomspace(1e-6, 1e3, 200)])
            vals = self.profile(probe)
            if np.any(vals < 0.0):
                raise DomainError("coefficient must be nonnegative")
            if np.any(vals > self.sup_norm * (1 + 1e-12)):
                raise DomainError("sampled values exceed the declared sup norm")
            if self.components is not None:
                per, dec = self.components
                if np.max(np.abs(per(probe) + dec(probe) - vals)) > 1e-12:
                    raise DomainError("Q_per + Q_0 does not reproduce Q")

    # constructors

    @classmethod
    def constant(cls, value: float = 1.0) -> "Coefficient":
        c = float(value)
        return cls("constant", c, lambda r: np.full(np.shape(r), c), label=f"const({c:g})")

    @classmethod
    def radial(cls, fn: Callable, sup_norm: float, components=None, label: str = "radial") -> "Coefficient":
        return cls("radial_profile", float(sup_norm), fn, components, label)

    @classmethod
    def cartesian(cls, fn: Callable, sup_norm: float, label: str = "cartesian") -> "Coefficient":
        return cls("cartesian_samples", float(sup_norm), fn, None, label)

    @property
    def is_radial(self) -> bool:
        return self.kind != "cartesian_samples"

    def profile(self, r) -> np.ndarray:
        if not self.is_radial:
            raise ConfigError("coefficient given by Cartesian samples has no radial profile")
        return np.asarray(self.fn(np.asarray(r, dtype=float)), dtype=float)

    def at_points(self, x: np.ndarray) -> np.ndarray:
        """Values at points of shape (..., N)."""
        x = np.asarray(x, dtype=float)
        if self.is_radial:
            return self.profile(np.linalg.norm(x, axis=-1))
        return np.asarray(self.fn(x), dtype=float)

    def on(self, v) -> np.ndarray:
        """Samples of Q on the discretisation of the field v."""
        if isinstance(v, ro.RadialFunction):
            return self.profile(v.grid.nodes)
        if hasattr(v, "points"):
            return self.at_points(v.points())
        raise ConfigError(f"unsupported field type {type(v).__name__}")


# named coefficient profiles used by configs and tests


def smoothed_ball(radius: float, width: float = 1.0) -> Coefficient:
    """1 on B_radius, 0 beyond radius + width, C^infinity in between."""
    from .instanton import smooth_step

    def fn(r):
        return smooth_step((np.asarray(r, dtype=float) - radius) / width)

    return Coefficient.radial(fn, 1.0, label=f"smoothed_ball({radius:g},{width:g})")


def power_bump(power: float) -> Coefficient:
    """(1 - |x|^power)_+ with its maximum 1 at the origin."""

    def fn(r):
        r = np.asarray(r, dtype=float)
        return np.maximum(1.0 - r**power, 0.0)

    return Coefficient.radial(fn, 1.0, label=f"power_bump({power:g})")


def coefficient_from_spec(spec: dict | None) -> Coefficient:
    """Build a coefficient from a config mapping such as {"kind": "constant", "value": 1}."""
    spec = {"kind": "constant"} if spec is None else dict(spec)
    kind = spec.pop("kind", "constant")
    builders = {
        "constant": lambda: Coefficient.constant(spec.pop("value", 1.0)),
        "smoothed_ball": lambda: smoothed_ball(spec.pop("radius", 5.0), spec.pop("width", 1.0)),
        "power_bump": lambda: power_bump(spec.pop("power", 4.0)),
        "split": lambda: split_coefficient(
            spec.pop("periodic_level", 1.0), spec.pop("decaying_amplitude", 0.5), spec.pop("decaying_width", 1.0)
        ),
    }
    if kind not in builders:
        raise ConfigError(f"unknown coefficient kind {kind!r}")
    Q = builders[kind]()
    if spec:
        raise ConfigError(f"unknown coefficient parameters {sorted(spec)}")
    return Q


def split_coefficient(level: float, amplitude: float, width: float) -> Coefficient:
    """Q = Q_per + Q_0 with a constant periodic part and a Gaussian decaying part."""
    level, amplitude, width = float(level), float(amplitude), float(width)

    def qp(r):
        return np.full(np.shape(r), level)

    def q0(r):
        return amplitude * np.exp(-((np.asarray(r, dtype=float) / width) ** 2))

    return Coefficient.radial(lambda r: qp(r) + q0(r), level + amplitude, (qp, q0), "split")


# generic field helpers


def _ctx_of(v) -> DimensionContext:
    return v.grid.ctx if isinstance(v, ro.RadialFunction) else v.ctx


def _dot(v, w) -> float:
    return float(np.sum(v.weights * v.values * w.values))


def norm(v, p: float) -> float:
    return float(np.sum(v.weights * np.abs(v.values) ** p) ** (1.0 / p))


def _signed_power(x: np.ndarray, e: float) -> np.ndarray:
    return np.sign(x) * np.abs(x) ** e


def _resolvent(v, backend: str | None):
    if isinstance(v, ro.RadialFunction):
        if backend not in (None, "radial"):
            raise ConfigError(f"backend {backend!r} cannot act on a radial field")
        res = ro.RadialResolvent.on(v.grid, ro.psi_kernel(v.grid.ctx))
        return res.apply
    if hasattr(v, "apply_resolvent"):
        if backend == "radial":
            raise ConfigError("radial backend cannot act on a Cartesian field")
        return lambda f: f.apply_resolvent(backend)
    raise ConfigError(f"unsupported field type {type(v).__name__}")


def a_q_apply(Q: Coefficient, v, backend: str | None = None):
    """Q^{1/2*} Psi * (Q^{1/2*} v) on the discretisation of v."""
    if isinstance(v, ro.RadialFunction) and not Q.is_radial:
        raise ConfigError("radial fields need a radial coefficient")
    ctx = _ctx_of(v)
    qh = Q.on(v) ** (1.0 / ctx.two_star)
    apply = _resolvent(v, backend)
    return v.with_values(qh * apply(v.with_values(qh * v.values)).values)


def quad_form(Q: Coefficient, v, backend: str | None = None) -> float:
    """int v A_Q v."""
    if isinstance(v, ro.RadialFunction) and backend in (None, "radial"):
        if not Q.is_radial:
            raise ConfigError("radial fields need a radial coefficient")
        qh = Q.on(v) ** (1.0 / v.grid.ctx.two_star)
        w = v.with_values(qh * v.values)
        return ro.quadform(w, w, ro.psi_kernel(v.grid.ctx))
    return _dot(v, a_q_apply(Q, v, backend))


def j_q(Q: Coefficient, v, backend: str | None = None) -> float:
    """J_Q(v) = ||v||_{2+}^{2+}/2+ - (1/2) int v A_Q v."""
    p = _ctx_of(v).two_plus
    return norm(v, p) ** p / p - 0.5 * quad_form(Q, v, backend)


def j_q_grad(Q: Coefficient, v, backend: str | None = None):
    """|v|^{2+ - 2} v - A_Q v."""
    p = _ctx_of(v).two_plus
    return v.with_values(_signed_power(v.values, p - 1.0) - a_q_apply(Q, v, backend).values)


def _t_from(norm_p: float, qf: float, p: float) -> float:
    if not qf > 0.0:
        raise ProjectionError(f"quadratic form must be positive, got {qf:.6g}")
    return (norm_p / qf) ** (1.0 / (2.0 - p))


def t_projection(Q: Coefficient, v, backend: str | None = None) -> float:
    """The unique t > 0 maximising t -> J_Q(t v)."""
    p = _ctx_of(v).two_plus
    return _t_from(norm(v, p) ** p, quad_form(Q, v, backend), p)


def rayleigh_bound(ctx: DimensionContext, norm_2plus: float, qf: float) -> float:
    """(1/N) (||v||^2_{2+} / int v A v)^{N/2}."""
    if not qf > 0.0:
        raise ProjectionError(f"quadratic form must be positive, got {qf:.6g}")
    return (norm_2plus**2 / qf) ** (ctx.N / 2.0) / ctx.N


def mp_upper_bound(Q: Coefficient, v, backend: str | None = None) -> float:
    """Upper bound on the mountain-pass level from the test function v."""
    ctx = _ctx_of(v)
    return rayleigh_bound(ctx, norm(v, ctx.two_plus), quad_form(Q, v, backend))


@dataclass
class DualState:
    """A candidate critical point of J_Q with its cached diagnostics."""

    v: object
    norm_2plus: float
    quadform_AQ: float
    energy: float
    residual: float

    @classmethod
    def evaluate(cls, Q: Coefficient, v, backend: str | None = None) -> "DualState":
        ctx = _ctx_of(v)
        p = ctx.two_plus
        av = a_q_apply(Q, v, backend)
        n = norm(v, p)
        qf = _dot(v, av)
        grad = v.with_values(_signed_power(v.values, p - 1.0) - av.values)
        return cls(v, n, qf, n**p / p - 0.5 * qf, norm(grad, p))

    def energy_check(self, ctx: DimensionContext) -> float:
        """|J_Q(v) - ||v||^{2+}_{2+}/N|, small at critical points."""
        return abs(self.energy - self.norm_2plus**ctx.two_plus / ctx.N)


@lru_cache(maxsize=None)
def _sobolev_paths(N: int) -> tuple[float, float]:
    ctx = DimensionContext(N)
    R = 1e8
    grid = ro.make_grid(ctx, R, ro.PanelSpec(nodes_per_panel=16, inner_levels=6, max_panel=None, outer_ratio=2.0))
    r = grid.nodes
    c = (N * (N - 2.0)) ** ((N - 2) / 4.0)
    # ||u_1||_{2*}^{2*}; integrand decays like r^{-N-1}
    u_pow = (N * (N - 2.0)) ** (N / 2.0) * (1.0 + r * r) ** (-N)
    lead_a = (N * (N - 2.0)) ** (N / 2.0)
    tail_a = lead_a * R ** (-N) / N
    path_a = ro.integrate(ro.RadialFunction(grid, u_pow)) + ctx.sphere_area * tail_a
    # ||grad u_1||_2^2; integrand decays like r^{1-N}
    du = -(N - 2.0) * c * r * (1.0 + r * r) ** (-N / 2.0)
    lead_b = ((N - 2.0) * c) ** 2
    tail_b = lead_b * (R ** (2 - N) / (N - 2) - N * R ** (-N) / N)
    path_b = ro.integrate(ro.RadialFunction(grid, du * du)) + ctx.sphere_area * tail_b
    return path_a ** (2.0 / N), path_b ** (2.0 / N)


def sobolev_constant(ctx: DimensionContext) -> float:
    """Best Sobolev constant S from ||u_1||_{2*}^{2*} = S^{N/2}."""
    return _sobolev_paths(ctx.N)[0]


def sobolev_constant_gradient(ctx: DimensionContext) -> float:
    """S from the independent route ||grad u_1||_2^2 = S^{N/2}."""
    return _sobolev_paths(ctx.N)[1]


def l_q_star(Q: Coefficient, ctx: DimensionContext) -> float:
    """S^{N/2} / (N ||Q||_inf^{(N-2)/2})."""
    if not Q.sup_norm > 0.0:
        raise DomainError("threshold needs a nonzero coefficient")
    return sobolev_constant(ctx) ** (ctx.N / 2.0) / (ctx.N * Q.sup_norm ** ((ctx.N - 2) / 2.0))


@dataclass(frozen=True)
class FlatnessReport:
    x0: tuple
    radii: tuple
    ratios: tuple
    limsup: float
    exponent: float
    o_condition: bool
    O_condition: bool

    def as_dict(self) -> dict:
        return {
            "x0": list(self.x0),
            "radii": list(self.radii),
            "ratios": list(self.ratios),
            "limsup": self.limsup,
            "exponent": self.exponent,
            "o_condition": self.o_condition,
            "O_condition": self.O_condition,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def default_flatness_radii() -> np.ndarray:
    r = [1e-1]
    while r[-1] / 2.0 >= 1e-6:
        r.append(r[-1] / 2.0)
    return np.asarray(r)


def flatness_check(Q: Coefficient, x0, radii=None, ctx: DimensionContext | None = None) -> FlatnessReport:
    """Trend of (Q(x0) - Q(x)) / |x - x0|^2 on shrinking spheres around x0.

    Each radius samples the 2N points x0 +- r e_i.  The o-condition is
    reported when the ratios decay (fitted exponent above 1/2, or they vanish
    to rounding); the O-condition when they stay bounded.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    N = x0.size if ctx is None else ctx.N
    if x0.size == 1 and N > 1:
        x0 = np.full(N, float(x0[0])) if x0[0] != 0.0 else np.zeros(N)
    radii = default_flatness_radii() if radii is None else np.sort(np.asarray(radii, dtype=float))[::-1]
    if radii.size < 3 or np.any(radii <= 0.0):
        raise DomainError("need at least three positive radii")
    q0 = float(Q.at_points(x0[None, :])[0])
    if abs(q0 - Q.sup_norm) > 1e-12 * max(1.0, Q.sup_norm):
        raise PreconditionError(f"Q(x0) = {q0} is not the sup norm {Q.sup_norm}")
    dirs = np.concatenate([np.eye(N), -np.eye(N)])
    ratios = []
    for r in radii:
        vals = Q.at_points(x0[None, :] + r * dirs)
        if np.any(vals > q0 + 1e-12 * max(1.0, q0)):
            raise PreconditionError("x0 is not a maximum of Q")
        ratios.append(float(np.max(q0 - vals) / r**2))
    ratios = np.maximum(np.asarray(ratios), 0.0)
    half = ratios[ratios.size // 2 :]
    limsup = float(np.max(half))
    scale = max(1.0, float(np.max(ratios)))
    pos = ratios > 1e-9 * scale
    tail_r, tail_q = radii[pos][-6:], ratios[pos][-6:]
    if tail_r.size >= 3:
        exponent = float(np.polyfit(np.log(tail_r), np.log(tail_q), 1)[0])
    else:
        exponent = math.inf
    vanishing = ratios[-1] <= 1e-6 * scale
    o_cond = bool(vanishing or exponent > 0.5)
    O_cond = bool(np.all(np.isfinite(ratios)) and (o_cond or half[-1] <= 2.0 * half[0] + 1e-12))
    return FlatnessReport(
        x0=tuple(float(x) for x in x0),
        radii=tuple(float(r) for r in radii),
        ratios=tuple(float(q) for q in ratios),
        limsup=limsup,
        exponent=exponent,
        o_condition=o_cond,
        O_condition=O_cond,
    )


def energy_profile(Q: Coefficient, v, t_values, backend: str | None = None) -> dict[str, np.ndarray]:
    """t -> J_Q(t v) as CSV-ready columns, reusing one quadratic form."""
    ctx = _ctx_of(v)
    p = ctx.two_plus
    t = np.asarray(t_values, dtype=float)
    a = norm(v, p) ** p / p
    b = 0.5 * quad_form(Q, v, backend)
    return {"t": t, "J": a * t**p - b * t * t}
