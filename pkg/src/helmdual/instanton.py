"""Instantons, truncated dual instantons and the four-term gap certificate.

The quadratic form of the truncated dual instanton v = phi_alpha v_eps splits
as

    int v A_Q v = main - tail + kernel - coeff

with main = q^{2/2*} int v_eps Lambda*v_eps, tail = q^{2/2*} int (1+phi) v_eps
Lambda*((1-phi) v_eps), kernel = q^{2/2*} int v (Psi-Lambda)*v and coeff =
int v (A_q - A_Q) v.  Every term is computed by quadrature; main and tail on
a long geometric grid through the Newton potential, kernel and coeff on the
support of the cutoff through the angular-average quadrature.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from . import dualvar, fundsol
from . import radialops as ro
from .dualvar import Coefficient
from .errors import DomainError, PreconditionError, RangeError
from .fundsol import DimensionContext

WHOLE_R = 1e6
INNER_LEVELS = 30
DEFAULT_NODES = 12
COARSE_DROP = 4


def _eps_ok(eps: float) -> None:
    if not (eps > 0.0 and math.isfinite(eps)):
        raise DomainError(f"eps must be positive, got {eps}")


def u_instanton(ctx: DimensionContext, eps: float, r):
    """Aubin-Talenti instanton (N(N-2) eps)^{(N-2)/4} (eps + r^2)^{-(N-2)/2}."""
    _eps_ok(eps)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0.0):
        raise DomainError("r must be nonnegative")
    N = ctx.N
    res = (N * (N - 2) * eps) ** ((N - 2) / 4.0) * (eps + r * r) ** (-(N - 2) / 2.0)
    return float(res) if res.ndim == 0 else res


def v_instanton(ctx: DimensionContext, eps: float, r):
    """Dual instanton (N(N-2) eps)^{(N+2)/4} (eps + r^2)^{-(N+2)/2}."""
    _eps_ok(eps)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0.0):
        raise DomainError("r must be nonnegative")
    N = ctx.N
    res = (N * (N - 2) * eps) ** ((N + 2) / 4.0) * (eps + r * r) ** (-(N + 2) / 2.0)
    return float(res) if res.ndim == 0 else res


def _g(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0.0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step(x):
    """C^infinity step: 1 for x <= 0, 0 for x >= 1."""
    x = np.asarray(x, dtype=float)
    a, b = _g(1.0 - x), _g(x)
    res = a / (a + b)
    return float(res) if res.ndim == 0 else res


def cutoff(r):
    """Radial bump phi: 1 on [0, 1], 0 on [2, inf), smooth in between."""
    return smooth_step(np.asarray(r, dtype=float) - 1.0)


@dataclass(frozen=True)
class InstantonParams:
    eps: float
    alpha: float

    def __post_init__(self):
        _eps_ok(self.eps)
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise DomainError(f"alpha must be positive, got {self.alpha}")


def cutoff_family(params: InstantonParams, ctx: DimensionContext, grid: ro.RadialGrid) -> ro.RadialFunction:
    """phi(r / alpha) v_eps(r) on the nodes of ``grid``."""
    if grid.ctx.N != ctx.N:
        raise RangeError("grid dimension differs from the context")
    if grid.R_max < 2.0 * params.alpha * (1 - 1e-12):
        raise RangeError(f"grid ends at {grid.R_max:g}, below 2 alpha = {2 * params.alpha:g}")
    r = grid.nodes
    return ro.RadialFunction(grid, cutoff(r / params.alpha) * v_instanton(ctx, params.eps, r))


def tail_norm_bound(ctx: DimensionContext, params: InstantonParams) -> float:
    """Upper bound for ||(1 - phi_alpha) v_eps||_{2+}^{2+}."""
    N = ctx.N
    return ctx.omega_N * (N * (N - 2.0)) ** (N / 2.0) * params.alpha ** (-N) * params.eps ** (N / 2.0)


def tail_term_bound(ctx: DimensionContext, q: float, params: InstantonParams) -> float:
    """Estimate of the tail cross term from Hardy-Littlewood-Sobolev and the tail norm."""
    N = ctx.N
    S = dualvar.sobolev_constant(ctx)
    return (
        2.0
        * q ** (2.0 / ctx.two_star)
        * ctx.omega_N ** (1.0 / ctx.two_plus)
        * S ** ((N - 2) / 4.0)
        * (N * (N - 2.0)) ** ((N + 2) / 4.0)
        * params.alpha ** (-(N + 2) / 2.0)
        * params.eps ** ((N + 2) / 4.0)
    )


def unit_ball_mass(ctx: DimensionContext) -> float:
    """int_{B_1} v_1 dx."""
    x, w = np.polynomial.legendre.leggauss(60)
    r = 0.5 * (x + 1.0)
    return float(ctx.sphere_area * np.sum(0.5 * w * r ** (ctx.N - 1) * v_instanton(ctx, 1.0, r)))


def kappa0(ctx: DimensionContext, alpha: float) -> float | None:
    """Empirical lower constant of (Psi - Lambda)/w on (0, 4 alpha], or None when out of range."""
    if ctx.N < 4 or 4.0 * alpha >= fundsol.admissible_radius(ctx):
        return None
    return fundsol.certify_difference_bounds(ctx, 1e-6, 4.0 * alpha).kappa1_hat


def kernel_term_bound(ctx: DimensionContext, q: float, params: InstantonParams) -> float | None:
    """Lower bound gamma*eps (eps |ln 2 sqrt eps| for N = 4) on the kernel term."""
    k0 = kappa0(ctx, params.alpha)
    if k0 is None:
        return None
    base = k0 * q ** (2.0 / ctx.two_star) * unit_ball_mass(ctx) ** 2
    if ctx.N == 4:
        return params.eps * abs(math.log(2.0 * math.sqrt(params.eps))) * base
    return 2.0 ** (4 - ctx.N) * base * params.eps


@dataclass(frozen=True)
class GapCertificate:
    N: int
    eps: float
    alpha: float
    q: float
    term_main: float
    term_tail: float
    term_kernel: float
    term_coeff: float
    norm_2plus: float
    upper_bound: float
    l_star: float
    gap: float
    error_bar: float
    certified: bool
    direct_form: float
    consistency: float
    kernel_bound: float | None = None
    tail_bound: float | None = None
    flags: tuple = field(default=())

    @property
    def denominator(self) -> float:
        return self.term_main - self.term_tail + self.term_kernel - self.term_coeff

    def as_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


@lru_cache(maxsize=32)
def core_grid(N: int, alpha: float, nodes: int) -> ro.RadialGrid:
    spec = ro.PanelSpec(nodes_per_panel=nodes, inner_levels=INNER_LEVELS, core=2.0 * alpha, breaks=(alpha,))
    return ro.make_grid(DimensionContext(N), 2.0 * alpha, spec)


@lru_cache(maxsize=32)
def whole_grid(N: int, alpha: float, nodes: int) -> ro.RadialGrid:
    spec = ro.PanelSpec(
        nodes_per_panel=nodes,
        inner_levels=INNER_LEVELS,
        core=alpha,
        max_panel=None,
        outer_ratio=2.0,
        breaks=(2.0 * alpha,),
    )
    return ro.make_grid(DimensionContext(N), max(WHOLE_R, 4.0 * alpha), spec)


def truncation_bound(ctx: DimensionContext, eps: float, mass: float, R: float) -> float:
    # v_eps <= c r^{-(N+2)} and Lambda * v_eps <= mass Lambda
    c = (ctx.N * (ctx.N - 2) * eps) ** ((ctx.N + 2) / 4.0)
    return 2.0 * mass * ctx.sphere_area * c * R ** (-ctx.N) / (ctx.N * ctx.newton_const)


def _terms(Q: Coefficient, params: InstantonParams, ctx: DimensionContext, nodes: int) -> dict:
    q = Q.sup_norm
    qf = q ** (2.0 / ctx.two_star)
    eps, alpha = params.eps, params.alpha

    wg = whole_grid(ctx.N, alpha, nodes)
    ve = ro.RadialFunction(wg, v_instanton(ctx, eps, wg.nodes))
    phi = cutoff(wg.nodes / alpha)
    inner = ve * phi
    outer = ve * (1.0 - phi)
    main = qf * ro.integrate(ve * ro.newton_potential(ve))
    tail = qf * ro.integrate((ve + inner) * ro.newton_potential(outer))
    trunc = qf * truncation_bound(ctx, eps, ro.integrate(ve), wg.R_max)

    cg = core_grid(ctx.N, alpha, nodes)
    v = cutoff_family(params, ctx, cg)
    qh = Q.profile(cg.nodes) ** (1.0 / ctx.two_star)
    vq = v * qh
    psi_k = ro.psi_kernel(ctx)
    kernel = qf * ro.quadform(v, v, ro.difference_kernel(ctx))
    form_q = qf * ro.quadform(v, v, psi_k)
    direct = ro.quadform(vq, vq, psi_k)
    coeff = form_q - direct
    lam_core = qf * ro.quadform(v, v, ro.newton_kernel(ctx))
    return {
        "main": main,
        "tail": tail,
        "kernel": kernel,
        "coeff": coeff,
        "norm": ro.lp_norm(v, ctx.two_plus),
        "direct": direct,
        "lambda_core": lam_core,
        "truncation": trunc,
    }


def bilinear_decomposition(
    Q: Coefficient, params: InstantonParams, ctx: DimensionContext, nodes: int = DEFAULT_NODES
) -> GapCertificate:
    """Four-term decomposition of int v A_Q v for v = phi_alpha v_eps, with an error bar.

    The error bar combines the change of every term between ``nodes`` and
    ``nodes - 4`` Gauss points per panel, the truncation of the long grid,
    and the mismatch between the Newton-potential and angular-quadrature
    routes for the Lambda form.
    """
    if not Q.is_radial:
        raise PreconditionError("the decomposition needs a radial coefficient")
    if params.eps > params.alpha**2 * (1 + 1e-12):
        raise PreconditionError(f"eps = {params.eps:g} exceeds alpha^2 = {params.alpha**2:g}")
    q0 = float(Q.profile(np.array([0.0]))[0])
    if abs(q0 - Q.sup_norm) > 1e-12 * Q.sup_norm:
        raise PreconditionError("Q must attain its sup norm at the origin")
    if nodes - COARSE_DROP < 4:
        raise PreconditionError("need at least 8 nodes per panel")

    fine = _terms(Q, params, ctx, nodes)
    coarse = _terms(Q, params, ctx, nodes - COARSE_DROP)
    D = fine["main"] - fine["tail"] + fine["kernel"] - fine["coeff"]
    n = fine["norm"]
    ub = dualvar.rayleigh_bound(ctx, n, D)
    l_star = dualvar.l_q_star(Q, ctx)

    d_terms = sum(abs(fine[k] - coarse[k]) for k in ("main", "tail", "kernel", "coeff"))
    lam_mismatch = abs((fine["main"] - fine["tail"]) - fine["lambda_core"])
    dD = d_terms + lam_mismatch + fine["truncation"]
    dn = abs(fine["norm"] - coarse["norm"])
    err = ub * (ctx.N / 2.0) * (dD / abs(D) + 2.0 * dn / n)
    gap = l_star - ub

    flags = []
    if fine["kernel"] <= 0.0:
        flags.append("kernel_term_nonpositive")
    kb = kernel_term_bound(ctx, Q.sup_norm, params) if ctx.N >= 4 else None
    if ctx.N >= 4 and kb is None:
        flags.append("kappa0_out_of_range")
    direct = fine["direct"]
    return GapCertificate(
        N=ctx.N,
        eps=params.eps,
        alpha=params.alpha,
        q=Q.sup_norm,
        term_main=fine["main"],
        term_tail=fine["tail"],
        term_kernel=fine["kernel"],
        term_coeff=fine["coeff"],
        norm_2plus=n,
        upper_bound=ub,
        l_star=l_star,
        gap=gap,
        error_bar=err,
        certified=bool(gap > err),
        direct_form=direct,
        consistency=abs(direct - D) / abs(direct),
        kernel_bound=kb,
        tail_bound=tail_term_bound(ctx, Q.sup_norm, params),
        flags=tuple(flags),
    )


def default_eps_list(alpha: float) -> np.ndarray:
    """Nine values over four decades starting at min(alpha^2, 1e-2)."""
    top = min(alpha * alpha, 1e-2)
    return top * 10.0 ** (-0.5 * np.arange(9))


@dataclass
class ScanResult:
    status: str
    best: GapCertificate
    certificates: list
    flatness: dict | None

    def as_dict(self) -> dict:
        return {
            "status": self.status,
            "best": self.best.as_dict(),
            "n_eps": len(self.certificates),
            "flatness": self.flatness,
        }

    def write(self, csv_path=None, json_path=None) -> None:
        if csv_path is not None:
            cols = ["eps", "term_main", "term_tail", "term_kernel", "term_coeff", "upper_bound", "l_star", "gap", "error_bar"]
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(cols)
                for c in self.certificates:
                    w.writerow([repr(float(getattr(c, k))) for k in cols])
        if json_path is not None:
            with open(json_path, "w") as fh:
                json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")


def strict_gap_scan(
    Q: Coefficient,
    ctx: DimensionContext,
    eps_list=None,
    alpha: float = 0.5,
    threads: int = 1,
    nodes: int = DEFAULT_NODES,
) -> ScanResult:
    """Scan eps and keep the smallest upper bound.

    Status is ``gap_certified`` when some bound undercuts L_Q* by more than
    its error bar, ``no_gap_equality`` for N = 3 when no bound does, and
    ``inconclusive`` otherwise.
    """
    flat = None
    if ctx.N >= 4:
        rep = dualvar.flatness_check(Q, np.zeros(ctx.N), ctx=ctx)
        flat = rep.as_dict()
        ok = rep.o_condition if ctx.N >= 5 else rep.O_condition
        if not ok:
            raise PreconditionError("Q is not flat enough at its maximum for this dimension")
    eps = default_eps_list(alpha) if eps_list is None else np.asarray(eps_list, dtype=float)
    if eps.size == 0:
        raise PreconditionError("empty eps list")
    eps = np.sort(eps)[::-1]
    # build the shared operators once before fanning out
    bilinear_decomposition(Q, InstantonParams(float(eps[0]), alpha), ctx, nodes)

    def run(e):
        return bilinear_decomposition(Q, InstantonParams(float(e), alpha), ctx, nodes)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            certs = list(ex.map(run, eps))
    else:
        certs = [run(e) for e in eps]
    good = [c for c in certs if c.certified]
    if good:
        best = min(good, key=lambda c: c.upper_bound)
        status = "gap_certified"
    else:
        best = min(certs, key=lambda c: c.upper_bound)
        if ctx.N == 3 and all(c.upper_bound >= c.l_star - c.error_bar for c in certs):
            status = "no_gap_equality"
        else:
            status = "inconclusive"
    return ScanResult(status, best, certs, flat)
