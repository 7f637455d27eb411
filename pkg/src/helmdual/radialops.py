"""Radial quadrature on R^N.

Radial profiles live on composite Gauss-Legendre grids.  Two independent
routes to convolutions are provided:

* ``newton_potential``: the one-dimensional shell formula for Lambda * f,
  evaluated with spectral cumulative integration;
* ``conv_matrix`` / ``quadform``: a generic kernel K(|x-y|) reduced to
  r, s and an angle, integrated over the angle with a mesh graded toward the
  near-coincidence point, and over s with the panel containing the target
  split at the target.

The surface factor N omega_N is kept out of the node weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from numpy.polynomial import legendre

from . import fundsol
from .errors import ConfigError, DomainError, ShapeError
from .fundsol import DimensionContext
from .specfun import gamma_fn

OSC_PANEL = math.pi / 4

# angular quadrature parameters
_THETA_NODES = 10
_THETA_GEO = 4.0
_THETA_MIN = 1e-13
_PHASE_STEP = 1.0
_CHUNK = 2_000_000


@dataclass(frozen=True)
class PanelSpec:
    """How to lay out panels on (0, R_max].

    Panels are refined geometrically toward 0 below ``core``; beyond it they
    are uniform of length at most ``max_panel`` or, when ``max_panel`` is
    None, grow geometrically by ``outer_ratio``.
    """

    nodes_per_panel: int = 12
    inner_levels: int = 24
    inner_ratio: float = 0.5
    core: float = 1.0
    max_panel: float | None = OSC_PANEL
    outer_ratio: float = 2.0
    breaks: tuple = ()

    @classmethod
    def from_dict(cls, d: dict | None) -> "PanelSpec":
        if d is None:
            return cls()
        if not isinstance(d, dict):
            raise ConfigError("panel spec must be a mapping")
        known = {f for f in cls.__dataclass_fields__}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown panel spec keys: {sorted(bad)}")
        kw = dict(d)
        if "breaks" in kw:
            kw["breaks"] = tuple(float(b) for b in kw["breaks"])
        return cls(**kw)


def _ref_rule(n: int):
    x, w = legendre.leggauss(n)
    return x, w


def _bary_weights(x: np.ndarray) -> np.ndarray:
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def _interp_matrix(x: np.ndarray, lam: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Lagrange interpolation matrix from nodes x to points y (shape y.shape + (n,))."""
    d = y[..., None] - x
    exact = d == 0.0
    d = np.where(exact, 1.0, d)
    t = lam / d
    mat = t / t.sum(axis=-1, keepdims=True)
    hit = exact.any(axis=-1)
    if hit.any():
        mat[hit] = exact[hit].astype(float)
    return mat


class RadialGrid:
    """Composite Gauss-Legendre grid on (0, R_max].

    ``weights`` integrate in dr only; ``volume`` gives N omega_N w r^{N-1},
    the weights for integrals over R^N of radial functions.
    """

    def __init__(self, ctx: DimensionContext, edges: Iterable[float], nodes_per_panel: int):
        edges = np.asarray(sorted(set(float(e) for e in edges)), dtype=float)
        if edges.size < 2:
            raise ConfigError("grid needs at least one panel")
        if edges[0] != 0.0 or np.any(np.diff(edges) <= 0.0):
            raise ConfigError("panel edges must start at 0 and increase")
        if nodes_per_panel < 2:
            raise ConfigError("need at least 2 nodes per panel")
        self.ctx = ctx
        self.edges = edges
        self.nodes_per_panel = int(nodes_per_panel)
        self.ref_nodes, self.ref_weights = _ref_rule(self.nodes_per_panel)
        self.bary = _bary_weights(self.ref_nodes)
        a, b = edges[:-1], edges[1:]
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        self.nodes = (mid[:, None] + half[:, None] * self.ref_nodes).ravel()
        self.weights = (half[:, None] * self.ref_weights).ravel()
        self.panel_of_node = np.repeat(np.arange(a.size), self.nodes_per_panel)
        self.volume = ctx.sphere_area * self.weights * self.nodes ** (ctx.N - 1)
        self._cache: dict = {}
        if not (np.all(np.diff(self.nodes) > 0.0) and np.all(self.weights > 0.0)):
            raise ConfigError("degenerate grid")

    def __repr__(self):
        return f"RadialGrid(N={self.ctx.N}, panels={self.n_panels}, p={self.nodes_per_panel}, R_max={self.R_max:g})"

    @property
    def panels(self) -> list[tuple[float, float]]:
        return list(zip(self.edges[:-1].tolist(), self.edges[1:].tolist()))

    @property
    def n_panels(self) -> int:
        return self.edges.size - 1

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def R_max(self) -> float:
        return float(self.edges[-1])

    @property
    def resolves_oscillation(self) -> bool:
        lengths = np.diff(self.edges)
        beyond = self.edges[:-1] >= 1.0
        return bool(np.all(lengths[beyond] <= OSC_PANEL * (1 + 1e-12)))

    def find_panel(self, r) -> np.ndarray:
        """Index of the panel whose interior contains r; -1 on edges or outside."""
        r = np.asarray(r, dtype=float)
        idx = np.searchsorted(self.edges, r, side="right") - 1
        inside = (r > 0.0) & (r < self.R_max) & (idx >= 0) & (idx < self.n_panels)
        idx = np.where(inside, idx, -1)
        on_edge = np.isin(r, self.edges)
        return np.where(on_edge, -1, idx)

    def interp_matrix(self, r) -> tuple[np.ndarray, np.ndarray]:
        """Interpolation rows for points r: (panel index, weights over that panel's nodes)."""
        r = np.asarray(r, dtype=float)
        idx = np.searchsorted(self.edges, r, side="right") - 1
        idx = np.clip(idx, 0, self.n_panels - 1)
        a, b = self.edges[idx], self.edges[idx + 1]
        x = (2.0 * r - a - b) / (b - a)
        return idx, _interp_matrix(self.ref_nodes, self.bary, x)

    def cached(self, key, build: Callable):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]


def make_grid(ctx: DimensionContext, R_max: float, panels_spec: PanelSpec | dict | None = None) -> RadialGrid:
    """Build a composite grid on (0, R_max] following ``panels_spec``."""
    spec = panels_spec if isinstance(panels_spec, PanelSpec) else PanelSpec.from_dict(panels_spec)
    if not R_max > 0.0:
        raise ConfigError("R_max must be positive")
    if spec.inner_levels < 0 or not 0.0 < spec.inner_ratio < 1.0:
        raise ConfigError("bad inner refinement")
    core = min(spec.core, R_max)
    edges = [0.0, core, R_max]
    edges += [core * spec.inner_ratio**k for k in range(1, spec.inner_levels + 1)]
    if R_max > core:
        if spec.max_panel is not None:
            m = int(math.ceil((R_max - core) / spec.max_panel - 1e-12))
            edges += np.linspace(core, R_max, m + 1).tolist()
        else:
            if spec.outer_ratio <= 1.0:
                raise ConfigError("outer_ratio must exceed 1")
            e = core * spec.outer_ratio
            while e < R_max * (1 - 1e-9):
                edges.append(e)
                e *= spec.outer_ratio
    edges += [b for b in spec.breaks if 0.0 < b < R_max]
    edges = np.unique(np.asarray(edges, dtype=float))
    keep = np.concatenate([[True], np.diff(edges) > 1e-13 * np.maximum(edges[1:], 1e-300)])
    edges = edges[keep]
    if spec.max_panel is not None:
        refined = [edges[0]]
        for a, b in zip(edges[:-1], edges[1:]):
            if a >= 1.0 and b - a > OSC_PANEL:
                m = int(math.ceil((b - a) / OSC_PANEL - 1e-12))
                refined += np.linspace(a, b, m + 1)[1:].tolist()
            else:
                refined.append(b)
        edges = np.asarray(refined)
    return RadialGrid(ctx, edges, spec.nodes_per_panel)


@dataclass
class RadialFunction:
    """Samples of a radial profile at the nodes of a grid."""

    grid: RadialGrid
    values: np.ndarray
    flags: tuple = field(default=())

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.nodes.shape:
            raise ShapeError(f"values of shape {self.values.shape} do not match grid with {self.grid.n} nodes")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("radial function has non-finite samples")

    @classmethod
    def from_callable(cls, grid: RadialGrid, fn: Callable) -> "RadialFunction":
        return cls(grid, fn(grid.nodes))

    @property
    def radii(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def weights(self) -> np.ndarray:
        return self.grid.volume

    def with_values(self, values) -> "RadialFunction":
        return RadialFunction(self.grid, values)

    def _same(self, other):
        if isinstance(other, RadialFunction):
            if other.grid is not self.grid:
                raise ShapeError("radial functions live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return self.with_values(self.values + self._same(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.with_values(self.values - self._same(other))

    def __mul__(self, other):
        return self.with_values(self.values * self._same(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def __abs__(self):
        return self.with_values(np.abs(self.values))

    def __call__(self, r):
        """Evaluate by per-panel polynomial interpolation; 0 beyond R_max."""
        r = np.asarray(r, dtype=float)
        flat = r.reshape(-1)
        idx, mat = self.grid.interp_matrix(flat)
        p = self.grid.nodes_per_panel
        vals = self.values.reshape(-1, p)[idx]
        out = np.einsum("ij,ij->i", mat, vals)
        out[flat > self.grid.R_max] = 0.0
        out = out.reshape(r.shape)
        return float(out) if r.ndim == 0 else out


def integrate(f: RadialFunction) -> float:
    """Integral of the radial function over R^N."""
    return float(np.dot(f.grid.volume, f.values))


def lp_norm(f: RadialFunction, p: float) -> float:
    """(N omega_N int |f|^p r^{N-1} dr)^{1/p}."""
    if not p >= 1.0:
        raise DomainError(f"lp_norm needs p >= 1, got {p}")
    return float(np.dot(f.grid.volume, np.abs(f.values) ** p) ** (1.0 / p))


# spectral cumulative integration ------------------------------------------------


def _panel_antiderivative(grid: RadialGrid, g: np.ndarray) -> np.ndarray:
    """Legendre coefficients of the within-panel antiderivative of g (vanishing at the left edge)."""
    p = grid.nodes_per_panel
    key = ("vander_inv", p)
    vinv = grid.cached(key, lambda: np.linalg.inv(legendre.legvander(grid.ref_nodes, p - 1)))
    coefs = (vinv @ g.reshape(-1, p).T).T  # (P, p)
    half = 0.5 * np.diff(grid.edges)
    anti = legendre.legint(coefs.T, m=1, lbnd=-1.0).T  # (P, p+1)
    return anti * half[:, None]


def _cumulative_at(grid: RadialGrid, g: np.ndarray, r: np.ndarray) -> np.ndarray:
    """int_0^r g(s) ds for arbitrary r, g given at the grid nodes."""
    anti = _panel_antiderivative(grid, g)
    full = anti @ np.ones(anti.shape[1])  # P_j(1) = 1
    before = np.concatenate([[0.0], np.cumsum(full)])
    r = np.asarray(r, dtype=float)
    rc = np.clip(r, 0.0, grid.R_max)
    idx = np.clip(np.searchsorted(grid.edges, rc, side="right") - 1, 0, grid.n_panels - 1)
    a, b = grid.edges[idx], grid.edges[idx + 1]
    x = (2.0 * rc - a - b) / (b - a)
    vand = legendre.legvander(x, anti.shape[1] - 1)
    partial = np.einsum("ij,ij->i", vand, anti[idx])
    return before[idx] + partial


def newton_potential_at(f: RadialFunction, r) -> np.ndarray:
    """(Lambda * f)(r) at arbitrary radii via the shell formula."""
    grid, ctx = f.grid, f.grid.ctx
    s = grid.nodes
    inner = s ** (ctx.N - 1) * f.values
    outer = s * f.values / ctx.newton_const  # s^{N-1} Lambda(s) f(s)
    r = np.asarray(r, dtype=float)
    flat = r.reshape(-1)
    if np.any(flat <= 0.0):
        raise DomainError("newton potential is evaluated at r > 0")
    cin = _cumulative_at(grid, inner, flat)
    cout_total = _cumulative_at(grid, outer, np.array([grid.R_max]))[0]
    cout = cout_total - _cumulative_at(grid, outer, flat)
    res = ctx.sphere_area * (fundsol.lambda_fn(ctx, flat) * cin + cout)
    return res.reshape(r.shape)


def newton_potential(f: RadialFunction) -> RadialFunction:
    """Lambda * f at the grid nodes.

    A flag ``"slow_tail"`` is attached when |f| r^2 at R_max is not small
    compared with the potential, i.e. when truncation is likely visible.
    """
    vals = newton_potential_at(f, f.grid.nodes)
    R = f.grid.R_max
    tail = abs(f(R * (1 - 1e-12))) * R**2
    scale = max(np.max(np.abs(vals)), 1e-300)
    flags = ("slow_tail",) if tail > 1e-6 * scale else ()
    return RadialFunction(f.grid, vals, flags=flags)


# kernels and angular averages --------------------------------------------------


@dataclass(frozen=True)
class Kernel:
    """Radial convolution kernel K(|x - y|)."""

    name: str
    ctx: DimensionContext
    fn: Callable = field(compare=False)
    oscillatory: bool = False

    def __call__(self, d):
        return self.fn(np.asarray(d, dtype=float))


def psi_kernel(ctx: DimensionContext) -> Kernel:
    return Kernel("psi", ctx, lambda d: fundsol.psi(ctx, d), True)


def newton_kernel(ctx: DimensionContext) -> Kernel:
    return Kernel("lambda", ctx, lambda d: fundsol.lambda_fn(ctx, d), False)


def abs_psi_kernel(ctx: DimensionContext) -> Kernel:
    return Kernel("abs_psi", ctx, lambda d: np.abs(fundsol.psi(ctx, d)), True)


def difference_kernel(ctx: DimensionContext) -> Kernel:
    return Kernel("psi_minus_lambda", ctx, lambda d: fundsol.psi_minus_lambda(ctx, d), True)


def constant_kernel(ctx: DimensionContext, c: float = 1.0) -> Kernel:
    return Kernel(f"const{c:g}", ctx, lambda d: np.full_like(d, c), False)


def lower_sphere_area(ctx: DimensionContext) -> float:
    """|S^{N-2}|, the measure of the sphere of latitudes at fixed polar angle."""
    m = ctx.N - 1
    return 2.0 * math.pi ** (m / 2) / gamma_fn(m / 2)


def _angular_batch(kernel: Kernel, r: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Surface integral of K(|r e_1 - s w|) over the unit sphere, batched."""
    ctx = kernel.ctx
    r = np.asarray(r, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    if np.any(r <= 0.0) or np.any(s <= 0.0):
        raise DomainError("angular_average needs r, s > 0")
    lo, hi = np.minimum(r, s), np.maximum(r, s)
    theta_c = np.clip((hi - lo) / np.sqrt(hi * lo), _THETA_MIN, math.pi)
    n_geo = np.ceil(np.log(math.pi / theta_c) / math.log(_THETA_GEO)).astype(int)
    n_geo = np.maximum(n_geo, 0)
    if kernel.oscillatory:
        n_osc = np.maximum(np.ceil(lo * math.pi / _PHASE_STEP).astype(int), 1)
    else:
        n_osc = np.ones_like(n_geo)
    if ctx.N >= 5:
        # one Gauss panel over [0, pi] under-resolves sin^{N-2}
        n_osc = np.maximum(n_osc, 2)
    xg, wg = _ref_rule(_THETA_NODES)
    out = np.empty_like(r)
    m = ctx.N - 2
    keys = n_geo * 100_000 + n_osc
    for key in np.unique(keys):
        sel = np.nonzero(keys == key)[0]
        g, o = int(key // 100_000), int(key % 100_000)
        nbreak = g + o + 1
        per_row = nbreak * _THETA_NODES
        step = max(1, _CHUNK // per_row)
        for start in range(0, sel.size, step):
            idx = sel[start : start + step]
            tc = theta_c[idx]
            pts = [np.zeros((idx.size, 1)), np.full((idx.size, 1), math.pi)]
            if g > 0:
                pts.append(tc[:, None] * _THETA_GEO ** np.arange(g)[None, :])
            if o > 1:
                pts.append(np.broadcast_to(np.linspace(0.0, math.pi, o + 1)[1:-1], (idx.size, o - 1)))
            br = np.sort(np.minimum(np.concatenate(pts, axis=1), math.pi), axis=1)
            a, b = br[:, :-1], br[:, 1:]
            half = 0.5 * (b - a)
            theta = (0.5 * (a + b))[..., None] + half[..., None] * xg
            wts = half[..., None] * wg
            l, h = lo[idx][:, None, None], hi[idx][:, None, None]
            d = np.sqrt((h - l) ** 2 + 4.0 * h * l * np.sin(0.5 * theta) ** 2)
            d = np.maximum(d, 1e-300)
            vals = kernel(d) * np.sin(theta) ** m * wts
            out[idx] = vals.reshape(idx.size, -1).sum(axis=1)
    return lower_sphere_area(ctx) * out


def angular_average(K: Kernel, r, s, ctx: DimensionContext | None = None):
    """Integral of K(|r e_1 - s w|) over w in S^{N-1} (surface measure)."""
    if ctx is not None and ctx.N != K.ctx.N:
        raise ConfigError("kernel and context dimensions differ")
    ra, sa = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(s, dtype=float))
    res = _angular_batch(K, ra.ravel(), sa.ravel()).reshape(ra.shape)
    return float(res) if res.ndim == 0 else res


# convolution matrices ------------------------------------------------------------


def _split_panel_rows(grid: RadialGrid, kernel: Kernel, targets: np.ndarray, panels: np.ndarray):
    """Rows over the nodes of the panel containing each target, with that panel split at the target."""
    p = grid.nodes_per_panel
    ctx = grid.ctx
    a = grid.edges[panels]
    b = grid.edges[panels + 1]
    xr, wr = grid.ref_nodes, grid.ref_weights
    t = targets[:, None]
    left_half = 0.5 * (t - a[:, None])
    right_half = 0.5 * (b[:, None] - t)
    s_left = a[:, None] + left_half * (xr + 1.0)
    s_right = t + right_half * (xr + 1.0)
    s_sub = np.concatenate([s_left, s_right], axis=1)
    w_sub = np.concatenate([left_half * wr, right_half * wr], axis=1)
    x_sub = (2.0 * s_sub - a[:, None] - b[:, None]) / (b - a)[:, None]
    interp = _interp_matrix(grid.ref_nodes, grid.bary, x_sub)  # (m, 2p, p)
    A = _angular_batch(kernel, np.repeat(targets, 2 * p), s_sub.ravel()).reshape(s_sub.shape)
    coef = w_sub * s_sub ** (ctx.N - 1) * A
    return np.einsum("mk,mkj->mj", coef, interp)


def conv_matrix(grid: RadialGrid, kernel: Kernel, targets=None) -> np.ndarray:
    """Matrix T with (K * g)(targets) ~= T @ g for g sampled at the grid nodes."""
    if kernel.ctx.N != grid.ctx.N:
        raise ConfigError("kernel and grid dimensions differ")
    N = grid.ctx.N
    p = grid.nodes_per_panel
    col = grid.weights * grid.nodes ** (N - 1)
    if targets is None:
        n = grid.n
        pan = grid.panel_of_node
        iu, ju = np.triu_indices(n, k=1)
        off = pan[iu] != pan[ju]
        iu, ju = iu[off], ju[off]
        A = _angular_batch(kernel, grid.nodes[iu], grid.nodes[ju])
        full = np.zeros((n, n))
        full[iu, ju] = A
        full[ju, iu] = A
        T = full * col[None, :]
        rows = _split_panel_rows(grid, kernel, grid.nodes, pan)
        for k in range(grid.n_panels):
            sl = slice(k * p, (k + 1) * p)
            T[sl, sl] = rows[sl]
        return T
    tg = np.asarray(targets, dtype=float).ravel()
    if np.any(tg <= 0.0):
        raise DomainError("targets must be positive")
    pan = grid.find_panel(tg)
    T = _angular_batch(kernel, np.repeat(tg, grid.n), np.tile(grid.nodes, tg.size)).reshape(tg.size, grid.n)
    T *= col[None, :]
    inside = np.nonzero(pan >= 0)[0]
    if inside.size:
        rows = _split_panel_rows(grid, kernel, tg[inside], pan[inside])
        for k, i in enumerate(inside):
            sl = slice(pan[i] * p, (pan[i] + 1) * p)
            T[i, sl] = rows[k]
    return T


class RadialResolvent:
    """Convolution with a kernel on a radial grid.

    The bilinear form matrix diag(volume) T is symmetrised; ``asymmetry``
    records how far the raw discretisation was from symmetric.
    """

    def __init__(self, grid: RadialGrid, kernel: Kernel):
        self.grid = grid
        self.kernel = kernel
        T = conv_matrix(grid, kernel)
        B = grid.volume[:, None] * T
        sym = 0.5 * (B + B.T)
        self.asymmetry = float(np.linalg.norm(B - B.T) / max(np.linalg.norm(B), 1e-300))
        self.form_matrix = sym
        self.matrix = sym / grid.volume[:, None]

    @classmethod
    def on(cls, grid: RadialGrid, kernel: Kernel) -> "RadialResolvent":
        """Cached instance per grid and kernel name."""
        return grid.cached(("resolvent", kernel.name), lambda: cls(grid, kernel))

    def apply(self, f: RadialFunction) -> RadialFunction:
        if f.grid is not self.grid:
            raise ShapeError("field is not on the resolvent's grid")
        return f.with_values(self.matrix @ f.values)

    def form(self, f: RadialFunction, g: RadialFunction) -> float:
        if f.grid is not self.grid or g.grid is not self.grid:
            raise ShapeError("fields are not on the resolvent's grid")
        return float(f.values @ self.form_matrix @ g.values)

    def evaluate_at(self, f: RadialFunction, r) -> np.ndarray:
        """(K * f)(r) at arbitrary radii, without symmetrisation."""
        r = np.asarray(r, dtype=float)
        return (conv_matrix(self.grid, self.kernel, r.ravel()) @ f.values).reshape(r.shape)


def quadform(f: RadialFunction, g: RadialFunction, K: Kernel) -> float:
    """int int f(x) K(|x - y|) g(y) dx dy for radial f, g on the same grid."""
    if f.grid is not g.grid:
        raise ShapeError("quadform needs f and g on the same grid")
    return RadialResolvent.on(f.grid, K).form(f, g)


def dump_csv(path, columns: dict) -> None:
    """Write equally long columns to CSV with a header line."""
    import csv

    names = list(columns)
    data = [np.asarray(columns[k]).ravel() for k in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*data):
            w.writerow([repr(float(x)) for x in row])
