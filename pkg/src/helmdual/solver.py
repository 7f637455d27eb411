"""Resolvent backends, the damped fixed-point solver and far-field diagnostics.

Two discretisations of the real resolvent R = Psi * . are available:

* radial fields use the angular-average quadrature of ``radialops``;
* ``CartesianField`` (N = 3, 4) applies a Fourier multiplier with FFTs.

The Cartesian multipliers are ``pv`` (the regularised principal value
(|xi|^2 - 1)/((|xi|^2 - 1)^2 + delta^2)), ``truncated`` (exact transform of
Psi cut off at |x| = L, which reproduces Psi * f on |x| <= L - rho for data
supported in B_rho), ``laplace`` (1/|xi|^2 with the zero mode removed) and
``laplace_truncated``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import special

from . import dualvar, fundsol, instanton
from . import radialops as ro
from .dualvar import Coefficient, DualState
from .errors import ConfigError, DegenerateInitError, ProjectionError, ShapeError, WindowError
from .fundsol import DimensionContext

BACKENDS = ("pv", "truncated", "laplace", "laplace_truncated")
DEFAULT_BACKEND = "truncated"
PV_FACTOR = 2.0


class ResolutionWarning(UserWarning):
    """Frequency grid samples the sphere |xi| = 1 too closely for the pv multiplier."""


def _check_grid(ctx: DimensionContext, L: float, M: int) -> None:
    if ctx.N not in (3, 4):
        raise ConfigError("the Cartesian backend supports N = 3 and N = 4")
    if not (isinstance(M, (int, np.integer)) and M >= 16 and M & (M - 1) == 0):
        raise ConfigError(f"M must be a power of two >= 16, got {M!r}")
    if not L > 0.0:
        raise ConfigError("box half-width must be positive")


@lru_cache(maxsize=16)
def _axis(L: float, M: int) -> np.ndarray:
    return -L + (2.0 * L / M) * np.arange(M)


@lru_cache(maxsize=16)
def _kabs(N: int, L: float, M: int) -> np.ndarray:
    """|k| on the rfftn frequency grid."""
    h = 2.0 * L / M
    k = 2.0 * np.pi * np.fft.fftfreq(M, h)
    kr = 2.0 * np.pi * np.fft.rfftfreq(M, h)
    axes = [k] * (N - 1) + [kr]
    k2 = np.zeros([a.size for a in axes])
    for i, a in enumerate(axes):
        shape = [1] * N
        shape[i] = a.size
        k2 = k2 + a.reshape(shape) ** 2
    return np.sqrt(k2)


def truncated_transform(ctx: DimensionContext, kernel: str, R: float, k) -> np.ndarray:
    """Fourier transform of K 1_{|x| < R} for K = Psi or Lambda at radial frequencies k.

    Uses int K(r) J_{N/2-1}(k r) r^{N/2} dr (2 pi)^{N/2} k^{1-N/2} with a
    composite Gauss rule fine enough for the largest k.
    """
    k = np.asarray(k, dtype=float)
    kmax = float(np.max(k)) if k.size else 0.0
    panel = min(ro.OSC_PANEL, ro.OSC_PANEL / max(kmax, 1.0))
    spec = ro.PanelSpec(nodes_per_panel=16, inner_levels=30, core=min(1.0, R), max_panel=panel)
    grid = ro.make_grid(ctx, R, spec)
    # refine the outer panels to the k-dependent length
    edges = [0.0]
    for a, b in zip(grid.edges[:-1], grid.edges[1:]):
        m = max(1, int(math.ceil((b - a) / panel - 1e-12))) if a >= min(1.0, R) else 1
        edges += np.linspace(a, b, m + 1)[1:].tolist()
    grid = ro.RadialGrid(ctx, edges, 16)
    r, w = grid.nodes, grid.weights
    kv = fundsol.psi(ctx, r) if kernel == "psi" else fundsol.lambda_fn(ctx, r)
    nu = ctx.N / 2.0 - 1.0
    base = kv * r ** (ctx.N / 2.0) * w
    out = np.empty_like(k)
    uniq, inv = np.unique(k, return_inverse=True)
    vals = np.empty_like(uniq)
    zero = uniq == 0.0
    vals[zero] = ctx.sphere_area * np.sum(kv * r ** (ctx.N - 1) * w)
    nz = np.nonzero(~zero)[0]
    step = max(1, 4_000_000 // r.size)
    for s in range(0, nz.size, step):
        kk = uniq[nz[s : s + step]]
        J = special.jv(nu, np.outer(kk, r))
        vals[nz[s : s + step]] = (2.0 * np.pi) ** (ctx.N / 2.0) * kk ** (-nu) * (J @ base)
    out = vals[inv].reshape(k.shape)
    return out


@lru_cache(maxsize=8)
def multiplier(N: int, L: float, M: int, backend: str, pv_factor: float = PV_FACTOR) -> np.ndarray:
    """Fourier multiplier for ``backend`` on the rfftn grid of the box."""
    ctx = DimensionContext(N)
    k = _kabs(N, L, M)
    if backend == "pv":
        delta = pv_factor * np.pi / L
        s = k * k - 1.0
        if np.any(np.abs(s) < delta / 10.0):
            warnings.warn("frequency grid passes within delta/10 of |xi| = 1", ResolutionWarning, stacklevel=3)
        return s / (s * s + delta * delta)
    if backend == "laplace":
        with np.errstate(divide="ignore"):
            m = np.where(k > 0.0, 1.0 / np.where(k > 0.0, k * k, 1.0), 0.0)
        return m
    if backend == "truncated":
        return truncated_transform(ctx, "psi", L, k)
    if backend == "laplace_truncated":
        return truncated_transform(ctx, "lambda", L, k)
    raise ConfigError(f"unknown backend {backend!r}; choose from {BACKENDS}")


@dataclass
class CartesianField:
    """Samples on the uniform grid x_i = -L + i h, h = 2L/M, in N = 3 or 4 dimensions."""

    ctx: DimensionContext
    L: float
    M: int
    values: np.ndarray

    def __post_init__(self):
        _check_grid(self.ctx, self.L, self.M)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.M,) * self.ctx.N:
            raise ShapeError(f"expected shape {(self.M,) * self.ctx.N}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("field samples must be finite")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.M

    @property
    def weights(self) -> float:
        return self.h**self.ctx.N

    def radius(self) -> np.ndarray:
        ax = _axis(float(self.L), int(self.M))
        r2 = np.zeros((1,) * self.ctx.N)
        for i in range(self.ctx.N):
            shape = [1] * self.ctx.N
            shape[i] = self.M
            r2 = r2 + ax.reshape(shape) ** 2
        return np.sqrt(r2)

    def points(self) -> np.ndarray:
        ax = _axis(float(self.L), int(self.M))
        grids = np.meshgrid(*([ax] * self.ctx.N), indexing="ij")
        return np.stack(grids, axis=-1)

    @classmethod
    def from_radial(cls, ctx: DimensionContext, L: float, M: int, fn) -> "CartesianField":
        blank = cls(ctx, L, M, np.zeros((M,) * ctx.N))
        return blank.with_values(fn(blank.radius()))

    def with_values(self, values) -> "CartesianField":
        return CartesianField(self.ctx, self.L, self.M, np.broadcast_to(values, (self.M,) * self.ctx.N).copy())

    def apply_resolvent(self, backend: str | None = None) -> "CartesianField":
        b = DEFAULT_BACKEND if backend is None else backend
        m = multiplier(self.ctx.N, float(self.L), int(self.M), b)
        spec = np.fft.rfftn(self.values)
        return self.with_values(np.fft.irfftn(spec * m, s=self.values.shape, axes=tuple(range(self.ctx.N))))

    def roundtrip(self) -> "CartesianField":
        """Forward and inverse FFT, for Parseval checks."""
        return self.with_values(np.fft.irfftn(np.fft.rfftn(self.values), s=self.values.shape, axes=tuple(range(self.ctx.N))))


def resolvent_apply(f, backend: str | None = None):
    """Psi * f on the discretisation of f."""
    if isinstance(f, ro.RadialFunction):
        if backend not in (None, "radial"):
            raise ConfigError(f"backend {backend!r} cannot act on a radial field")
        return ro.RadialResolvent.on(f.grid, ro.psi_kernel(f.grid.ctx)).apply(f)
    if isinstance(f, CartesianField):
        if backend == "radial":
            raise ConfigError("radial backend cannot act on a Cartesian field")
        return f.apply_resolvent(backend)
    raise ConfigError(f"unsupported field type {type(f).__name__}")


# fixed-point iteration ----------------------------------------------------------


@dataclass(frozen=True)
class SolveParams:
    max_iter: int = 500
    tol: float = 1e-6
    damping: float = 0.5
    backend: str | None = None

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigError("max_iter must be positive")
        if not self.tol > 0.0:
            raise ConfigError("tol must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigError("damping must lie in (0, 1]")


@dataclass
class SolveReport:
    """Outcome of a fixed-point run.

    ``residual_history`` holds ||grad J_Q(v)||_{2+} / ||v||_{2+}^{2+ - 1}
    for each iterate, which is the quantity compared with the tolerance.
    """

    iterations: int
    residual_history: list
    final_state: DualState
    energy: float
    mp_bound: float
    converged: bool
    status: str = ""
    energy_identity_gap: float = field(default=math.nan)

    def summary(self) -> dict:
        return {
            "status": self.status,
            "converged": self.converged,
            "iterations": self.iterations,
            "energy": self.energy,
            "mp_bound": self.mp_bound,
            "norm_2plus": self.final_state.norm_2plus,
            "residual": self.final_state.residual,
            "relative_residual": self.residual_history[-1] if self.residual_history else math.nan,
            "energy_identity_gap": self.energy_identity_gap,
        }


def _ctx(v) -> DimensionContext:
    return v.grid.ctx if isinstance(v, ro.RadialFunction) else v.ctx


def fixed_point_solve(Q: Coefficient, init, params: SolveParams | None = None) -> SolveReport:
    """Damped normalised iteration v <- (1 - theta) v + theta t_w w, w = |A_Q v|^{2*-2} A_Q v."""
    params = SolveParams() if params is None else params
    ctx = _ctx(init)
    p, ps = ctx.two_plus, ctx.two_star
    if not np.any(init.values != 0.0):
        raise DegenerateInitError("initial guess is identically zero")
    try:
        v = init.with_values(init.values * dualvar.t_projection(Q, init, params.backend))
    except ProjectionError as exc:
        raise DegenerateInitError(f"initial guess has nonpositive quadratic form: {exc}") from exc

    history: list[float] = []
    converged = False
    it = 0
    theta = params.damping
    for it in range(1, params.max_iter + 1):
        av = dualvar.a_q_apply(Q, v, params.backend)
        n = dualvar.norm(v, p)
        grad = v.with_values(np.sign(v.values) * np.abs(v.values) ** (p - 1.0) - av.values)
        rel = dualvar.norm(grad, p) / n ** (p - 1.0)
        history.append(float(rel))
        if rel < params.tol:
            converged = True
            break
        if it == params.max_iter:
            break
        w = v.with_values(np.sign(av.values) * np.abs(av.values) ** (ps - 1.0))
        try:
            tw = dualvar.t_projection(Q, w, params.backend)
        except ProjectionError:
            break
        v = v.with_values((1.0 - theta) * v.values + theta * tw * w.values)

    state = DualState.evaluate(Q, v, params.backend)
    try:
        mp = dualvar.mp_upper_bound(Q, v, params.backend)
    except ProjectionError:
        mp = math.nan
    return SolveReport(
        iterations=it,
        residual_history=history,
        final_state=state,
        energy=state.energy,
        mp_bound=mp,
        converged=converged,
        status="converged" if converged else "not_converged",
        energy_identity_gap=state.energy_check(ctx),
    )


def reconstruct_u(Q: Coefficient, v, backend: str | None = None):
    """u = Psi * (Q^{1/2*} v) and its L^{2*} norm."""
    ctx = _ctx(v)
    qh = Q.on(v) ** (1.0 / ctx.two_star)
    u = resolvent_apply(v.with_values(qh * v.values), backend)
    return u, dualvar.norm(u, ctx.two_star)


def radial_potential_at(f: ro.RadialFunction, r, kernel: ro.Kernel | None = None) -> np.ndarray:
    """(K * f)(r) at arbitrary radii, by default K = Psi."""
    kernel = ro.psi_kernel(f.grid.ctx) if kernel is None else kernel
    r = np.asarray(r, dtype=float)
    # Cartesian boxes repeat each radius many times
    uniq, inv = np.unique(r.ravel(), return_inverse=True)
    return (ro.conv_matrix(f.grid, kernel, uniq) @ f.values)[inv].reshape(r.shape)


@dataclass(frozen=True)
class FarFieldFit:
    amplitude: float
    phase: float
    rms_error: float

    @property
    def relative_rms(self) -> float:
        return self.rms_error / self.amplitude if self.amplitude > 0.0 else math.inf

    def as_dict(self) -> dict:
        return {"amplitude": self.amplitude, "phase": self.phase, "rms_error": self.rms_error}


def farfield_fit(u, ctx: DimensionContext, r_window=(20.0, 40.0), source_radius: float = 0.0, n_samples: int = 400) -> FarFieldFit:
    """Least-squares fit of u(r) r^{(N-1)/2} by A cos(r + phi0) on the window.

    ``u`` is a callable of r or a pair (r, values) of samples.
    """
    a, b = (float(x) for x in r_window)
    if not 0.0 < a < b:
        raise WindowError(f"bad window {r_window}")
    if a <= source_radius:
        raise WindowError(f"window starts at {a} inside the source support {source_radius}")
    if callable(u):
        r = np.linspace(a, b, n_samples)
        vals = np.asarray(u(r), dtype=float)
    else:
        r, vals = (np.asarray(x, dtype=float) for x in u)
        keep = (r >= a) & (r <= b)
        r, vals = r[keep], vals[keep]
        if r.size < 3:
            raise WindowError("fewer than three samples inside the window")
    y = vals * r ** ((ctx.N - 1) / 2.0)
    design = np.stack([np.cos(r), np.sin(r)], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    amp = float(math.hypot(coef[0], coef[1]))
    phase = float(math.atan2(-coef[1], coef[0])) if amp > 0.0 else 0.0
    rms = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
    return FarFieldFit(amp, phase, rms)


# N = 3 comparison ----------------------------------------------------------------


def _forms(v: ro.RadialFunction) -> tuple[float, float]:
    ctx = v.grid.ctx
    a = abs(v)
    return ro.quadform(a, a, ro.psi_kernel(ctx)), ro.quadform(a, a, ro.newton_kernel(ctx))


def v1_kernel_margin(R: float = 30.0, nodes: int = 12) -> dict:
    """Lambda-form minus Psi-form of the untruncated dual instanton v_1 in N = 3.

    The error bar adds the change between ``nodes`` and ``nodes - 4`` points
    per panel to twice the bound on what the truncation at R can hide.
    """
    ctx = DimensionContext(3)
    out = {}
    for p in (nodes, nodes - 4):
        g = ro.make_grid(ctx, R, ro.PanelSpec(nodes_per_panel=p, inner_levels=12))
        v = ro.RadialFunction(g, instanton.v_instanton(ctx, 1.0, g.nodes))
        out[p] = (_forms(v), ro.integrate(v))
    (psi_f, lam_f), mass = out[nodes]
    (psi_c, lam_c), _ = out[nodes - 4]
    mass_full = mass + ctx.sphere_area * 3.0 ** 1.25 * R**-2 / 2.0
    trunc = instanton.truncation_bound(ctx, 1.0, mass_full, R)
    err = abs(psi_f - psi_c) + abs(lam_f - lam_c) + 2.0 * trunc
    return {"psi_form": psi_f, "lambda_form": lam_f, "margin": lam_f - psi_f, "error_bar": err, "R": R}


def n3_nonexistence_probe(Q: Coefficient, family_params: dict | None = None) -> dict:
    """Instanton family in N = 3: Rayleigh bounds against L_Q* and the Psi/Lambda forms."""
    ctx = DimensionContext(3)
    fp = {} if family_params is None else dict(family_params)
    alpha = float(fp.pop("alpha", 0.5))
    eps_list = fp.pop("eps_list", None)
    with_v1 = bool(fp.pop("v1", True))
    if fp:
        raise ConfigError(f"unknown family parameters {sorted(fp)}")
    eps = np.geomspace(alpha**2 / 4.0, alpha**2 / 4.0 * 1e-3, 7) if eps_list is None else np.asarray(eps_list, float)
    eps = np.sort(eps)[::-1]
    l_star = dualvar.l_q_star(Q, ctx)
    rows = []
    for e in eps:
        bounds = []
        for p in (instanton.DEFAULT_NODES, instanton.DEFAULT_NODES - instanton.COARSE_DROP):
            g = instanton.core_grid(3, alpha, p)
            v = instanton.cutoff_family(instanton.InstantonParams(float(e), alpha), ctx, g)
            bounds.append((dualvar.mp_upper_bound(Q, v), *_forms(v)))
        (mp, psi_f, lam_f), (mp_c, psi_c, lam_c) = bounds
        err = abs(mp - mp_c)
        rows.append(
            {
                "eps": float(e),
                "mp_upper_bound": mp,
                "excess": mp - l_star,
                "error_bar": err,
                "psi_form": psi_f,
                "lambda_form": lam_f,
                "form_margin": lam_f - psi_f,
                "form_error_bar": abs(psi_f - psi_c) + abs(lam_f - lam_c),
            }
        )
    mps = np.array([r["mp_upper_bound"] for r in rows])
    samples = np.geomspace(1e-4, 1e3, 10_000)
    pointwise = bool(np.all(np.abs(fundsol.psi(ctx, samples)) <= fundsol.lambda_fn(ctx, samples)))
    report = {
        "N": 3,
        "alpha": alpha,
        "l_star": l_star,
        "rows": rows,
        "monotone_decreasing": bool(np.all(np.diff(mps) < 0.0)),
        "never_below_threshold": bool(all(r["excess"] >= -r["error_bar"] for r in rows)),
        "forms_strict": bool(all(r["form_margin"] > r["form_error_bar"] for r in rows)),
        "abs_psi_le_lambda_samples": pointwise,
    }
    if with_v1:
        report["v1"] = v1_kernel_margin()
    return report


# checkpoints -----------------------------------------------------------------------


def save_checkpoint(prefix, v, header: dict | None = None) -> tuple[Path, Path]:
    """Write ``prefix.json`` (grid and metadata) and ``prefix.bin`` (little-endian float64 samples)."""
    prefix = Path(prefix)
    meta = dict(header or {})
    if isinstance(v, ro.RadialFunction):
        meta["grid"] = {
            "type": "radial",
            "N": v.grid.ctx.N,
            "edges": v.grid.edges.tolist(),
            "nodes_per_panel": v.grid.nodes_per_panel,
        }
    elif isinstance(v, CartesianField):
        meta["grid"] = {"type": "cartesian", "N": v.ctx.N, "L": v.L, "M": v.M}
    else:
        raise ConfigError(f"cannot checkpoint {type(v).__name__}")
    meta["dtype"] = "<f8"
    meta["count"] = int(v.values.size)
    jp, bp = prefix.with_suffix(".json"), prefix.with_suffix(".bin")
    jp.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    bp.write_bytes(np.ascontiguousarray(v.values, dtype="<f8").tobytes())
    return jp, bp


def load_checkpoint(prefix):
    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".json").read_text())
    data = np.frombuffer(prefix.with_suffix(".bin").read_bytes(), dtype="<f8").copy()
    if data.size != meta["count"]:
        raise ShapeError("checkpoint size does not match its header")
    g = meta["grid"]
    ctx = DimensionContext(g["N"])
    if g["type"] == "radial":
        grid = ro.RadialGrid(ctx, g["edges"], g["nodes_per_panel"])
        return ro.RadialFunction(grid, data), meta
    return CartesianField(ctx, g["L"], g["M"], data.reshape((g["M"],) * ctx.N)), meta
