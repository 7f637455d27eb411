import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate as sci

from helmdual import dualvar, fundsol, instanton
from helmdual import radialops as ro
from helmdual.errors import ConfigError, DomainError, ShapeError
from helmdual.fundsol import DimensionContext

CTX3 = DimensionContext(3)


def long_grid(ctx, R=1e6):
    return ro.make_grid(ctx, R, ro.PanelSpec(inner_levels=12, max_panel=None, core=0.5))


def ball_grid(ctx, R=3.0):
    return ro.make_grid(ctx, R, ro.PanelSpec(inner_levels=10, breaks=(1.0,)))


# grids -----------------------------------------------------------------------


def test_single_panel_gauss_exactness():
    g = ro.RadialGrid(CTX3, [0.0, 1.0], 8)
    for k in range(16):
        assert np.sum(g.weights * g.nodes**k) == pytest.approx(1 / (k + 1), rel=1e-14)


@pytest.mark.parametrize("N", range(3, 9))
def test_unit_ball_volume(N):
    ctx = DimensionContext(N)
    g = ro.make_grid(ctx, 1.0)
    assert ro.integrate(ro.RadialFunction(g, np.ones(g.n))) == pytest.approx(ctx.omega_N, rel=1e-13)
    if N == 3:
        assert ctx.omega_N == pytest.approx(4.18879, abs=1e-5)


def test_log_refinement_resolves_inverse_square_root():
    g = ro.make_grid(CTX3, 1.0, ro.PanelSpec(inner_levels=50))
    assert np.sum(g.weights * g.nodes**-0.5) == pytest.approx(2.0, abs=1e-8)


def test_grid_invariants_and_oscillation_rule():
    g = ro.make_grid(DimensionContext(4), 30.0)
    assert np.all(np.diff(g.nodes) > 0) and np.all(g.weights > 0)
    lengths = np.diff(g.edges)
    assert np.all(lengths[g.edges[:-1] >= 1.0] <= ro.OSC_PANEL + 1e-12)
    assert g.resolves_oscillation
    assert g.R_max == 30.0 and g.n == g.n_panels * g.nodes_per_panel


def test_grid_config_errors():
    with pytest.raises(ConfigError):
        ro.RadialGrid(CTX3, [0.0], 8)
    with pytest.raises(ConfigError):
        ro.make_grid(CTX3, 0.0)
    with pytest.raises(ConfigError):
        ro.PanelSpec.from_dict({"bogus": 1})


def test_interpolation_reproduces_polynomials_and_vanishes_outside():
    g = ro.make_grid(CTX3, 5.0)
    f = ro.RadialFunction.from_callable(g, lambda r: r**3 - 2 * r)
    r = np.linspace(0.01, 4.99, 77)
    assert np.allclose(f(r), r**3 - 2 * r, rtol=1e-12, atol=1e-12)
    assert f(6.0) == 0.0


def test_radial_function_validation():
    g = ro.make_grid(CTX3, 1.0)
    with pytest.raises(ShapeError):
        ro.RadialFunction(g, np.ones(3))
    with pytest.raises(DomainError):
        ro.RadialFunction(g, np.full(g.n, np.nan))
    other = ro.make_grid(CTX3, 1.0)
    with pytest.raises(ShapeError):
        ro.RadialFunction(g, np.ones(g.n)) + ro.RadialFunction(other, np.ones(other.n))


# norms -----------------------------------------------------------------------


def test_lp_norm_of_indicator():
    g = ro.make_grid(CTX3, 1.0)
    one = ro.RadialFunction(g, np.ones(g.n))
    assert ro.lp_norm(one, 2) == pytest.approx(math.sqrt(4 * math.pi / 3), rel=1e-13)
    assert ro.lp_norm(one, 2) == pytest.approx(2.04665, abs=1e-5)


def test_lp_norm_rejects_small_exponent():
    g = ro.make_grid(CTX3, 1.0)
    with pytest.raises(DomainError):
        ro.lp_norm(ro.RadialFunction(g, np.ones(g.n)), 0.5)


def test_lp_norm_of_four_dimensional_instanton():
    ctx = DimensionContext(4)
    g = long_grid(ctx)
    u = ro.RadialFunction(g, instanton.u_instanton(ctx, 1.0, g.nodes))
    # 2 pi^2 * 64 * int r^3 (1 + r^2)^{-4} dr = 2 pi^2 * 64 / 12
    assert ro.lp_norm(u, 4) ** 4 == pytest.approx(32 * math.pi**2 / 3, rel=1e-10)
    assert 32 * math.pi**2 / 3 == pytest.approx(105.27578, abs=1e-5)


@pytest.mark.parametrize("N", [3, 4, 5, 6])
def test_dual_instanton_norm_independent_of_scale(N):
    ctx = DimensionContext(N)
    g = long_grid(ctx)
    norms = [ro.lp_norm(ro.RadialFunction(g, instanton.v_instanton(ctx, e, g.nodes)), ctx.two_plus) for e in (0.5, 1, 2)]
    assert max(norms) - min(norms) < 1e-8 * norms[0]


# Newton potential ------------------------------------------------------------


def test_newton_potential_of_ball_indicator():
    g = ball_grid(CTX3)
    ind = ro.RadialFunction(g, (g.nodes < 1.0).astype(float))
    pot = ro.newton_potential_at(ind, np.array([1e-9, 0.5, 2.0, 2.5]))
    assert pot[0] == pytest.approx(0.5, rel=1e-12)
    assert pot[1] == pytest.approx((3 - 0.25) / 6, rel=1e-12)
    assert pot[2] == pytest.approx(1 / 6, rel=1e-12)
    assert pot[3] == pytest.approx(1 / 7.5, rel=1e-12)
    nodes = ro.newton_potential(ind).values
    r = g.nodes
    exact = np.where(r < 1, (3 - r**2) / 6, 1 / (3 * r))
    assert np.allclose(nodes, exact, rtol=1e-12)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_newton_potential_linear(a, b):
    g = ball_grid(DimensionContext(5))
    f = ro.RadialFunction(g, np.exp(-g.nodes**2))
    h = ro.RadialFunction(g, np.cos(g.nodes) * (g.nodes < 2))
    lhs = ro.newton_potential(a * f + b * h).values
    rhs = a * ro.newton_potential(f).values + b * ro.newton_potential(h).values
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.max(np.abs(rhs)) + 1e-300)


def test_newton_potential_flags_slow_tail():
    g = ro.make_grid(CTX3, 10.0)
    slow = ro.RadialFunction(g, 1.0 / (1.0 + g.nodes))
    fast = ro.RadialFunction(g, np.exp(-(g.nodes**2)))
    assert "slow_tail" in ro.newton_potential(slow).flags
    assert ro.newton_potential(fast).flags == ()


# angular averages ------------------------------------------------------------


def test_constant_kernel_gives_sphere_area():
    for N in range(3, 9):
        ctx = DimensionContext(N)
        val = ro.angular_average(ro.constant_kernel(ctx), 1.3, 0.4, ctx)
        assert val == pytest.approx(ctx.sphere_area, rel=1e-12)
        far = ro.angular_average(ro.constant_kernel(ctx), 5.0, 0.01, ctx)
        assert far == pytest.approx(ctx.sphere_area, rel=1e-12)


def test_newton_shell_value():
    assert ro.angular_average(ro.newton_kernel(CTX3), 2.0, 1.0, CTX3) == pytest.approx(0.5, rel=1e-10)


@pytest.mark.parametrize("N", range(3, 9))
def test_newton_shell_theorem(N):
    ctx = DimensionContext(N)
    r = np.array([0.1, 0.5, 1.0, 1.0, 2.0, 7.0])
    s = np.array([0.3, 0.5, 0.999, 1.2, 2.0 + 1e-9, 0.01])
    val = ro.angular_average(ro.newton_kernel(ctx), r, s, ctx)
    assert np.allclose(val, ctx.sphere_area * fundsol.lambda_fn(ctx, np.maximum(r, s)), rtol=1e-8)


def _two_d_average(kernel, r, s):
    # surface integral over S^2 in spherical coordinates as an independent route
    f = lambda phi, th: kernel(math.sqrt(r * r + s * s - 2 * r * s * math.cos(th))) * math.sin(th)
    val, _ = sci.dblquad(f, 0.0, math.pi, 0.0, 2 * math.pi, epsabs=1e-13, epsrel=1e-11)
    return val


@pytest.mark.parametrize("r,s", [(0.7, 2.1), (3.0, 9.5), (12.0, 4.0)])
def test_psi_average_against_double_quadrature(r, s):
    k = ro.psi_kernel(CTX3)
    assert ro.angular_average(k, r, s, CTX3) == pytest.approx(_two_d_average(k, r, s), rel=1e-8, abs=1e-12)


@given(st.floats(0.01, 30.0), st.floats(0.01, 30.0))
def test_psi_average_closed_form_three_dimensions(r, s):
    # (1/(4 pi)) 2 pi / (r s) int_{|r-s|}^{r+s} cos d dd
    exact = (math.sin(r + s) - math.sin(abs(r - s))) / (2 * r * s)
    val = ro.angular_average(ro.psi_kernel(CTX3), r, s, CTX3)
    assert abs(val - exact) <= 1e-9 * (1.0 / (r * s) + 1.0 / max(r, s))


@given(st.integers(3, 8), st.floats(0.01, 20.0), st.floats(0.01, 20.0))
def test_angular_average_symmetric(N, r, s):
    ctx = DimensionContext(N)
    for k in (ro.psi_kernel(ctx), ro.difference_kernel(ctx)):
        a, b = ro.angular_average(k, r, s, ctx), ro.angular_average(k, s, r, ctx)
        assert abs(a - b) <= 1e-10 * max(abs(a), abs(b), 1e-300)


def test_angular_average_domain_error():
    with pytest.raises(DomainError):
        ro.angular_average(ro.psi_kernel(CTX3), 0.0, 1.0)
    with pytest.raises(ConfigError):
        ro.angular_average(ro.psi_kernel(CTX3), 1.0, 1.0, DimensionContext(4))


# quadratic forms -------------------------------------------------------------


def test_ball_indicator_newton_form():
    g = ball_grid(CTX3, 1.0)
    one = ro.RadialFunction(g, np.ones(g.n))
    assert ro.quadform(one, one, ro.newton_kernel(CTX3)) == pytest.approx(8 * math.pi / 15, rel=1e-10)


@pytest.mark.parametrize("N", [3, 4, 5])
def test_dual_instanton_is_hls_optimiser(N):
    ctx = DimensionContext(N)
    g = long_grid(ctx)
    v = ro.RadialFunction(g, instanton.v_instanton(ctx, 1.0, g.nodes))
    S = dualvar.sobolev_constant(ctx)
    lhs = ro.quadform(v, v, ro.newton_kernel(ctx))
    assert lhs == pytest.approx(ro.lp_norm(v, ctx.two_plus) ** 2 / S, rel=1e-4)


@pytest.mark.parametrize("N", [3, 4, 6])
def test_newton_form_two_routes(N):
    ctx = DimensionContext(N)
    g = ro.make_grid(ctx, 8.0, ro.PanelSpec(inner_levels=10))
    f = ro.RadialFunction(g, np.exp(-(g.nodes**2)) * (1 + np.sin(3 * g.nodes)))
    direct = ro.quadform(f, f, ro.newton_kernel(ctx))
    shells = ro.integrate(f * ro.newton_potential(f))
    assert direct == pytest.approx(shells, rel=1e-6)


def test_psi_form_against_fourier_principal_value():
    # int int f Psi f = (2 pi)^{-3} PV int |f^(k)|^2 / (k^2 - 1) dk for a Gaussian
    sigma = 0.8
    g = ro.make_grid(CTX3, 8.0, ro.PanelSpec(inner_levels=10))
    f = ro.RadialFunction(g, np.exp(-(g.nodes**2) / (2 * sigma**2)))
    fhat2 = lambda k: (2 * math.pi * sigma**2) ** 3 * math.exp(-(k * k) * sigma**2)
    h = lambda k: 4 * math.pi * k * k * fhat2(k) / (k + 1)
    pv, _ = sci.quad(h, 0.0, 20.0, weight="cauchy", wvar=1.0, epsabs=1e-13, epsrel=1e-12)
    ref = pv / (2 * math.pi) ** 3
    assert ro.quadform(f, f, ro.psi_kernel(CTX3)) == pytest.approx(ref, rel=1e-8)


def test_quadform_symmetric_and_bilinear():
    ctx = DimensionContext(4)
    g = ro.make_grid(ctx, 6.0, ro.PanelSpec(inner_levels=8))
    rng = np.random.default_rng(3)
    f = ro.RadialFunction(g, np.exp(-g.nodes) * rng.uniform(0.5, 1.5))
    h = ro.RadialFunction(g, np.exp(-((g.nodes - 2) ** 2)))
    K = ro.psi_kernel(ctx)
    assert ro.quadform(f, h, K) == pytest.approx(ro.quadform(h, f, K), rel=1e-12)
    assert ro.quadform(2 * f + h, h, K) == pytest.approx(2 * ro.quadform(f, h, K) + ro.quadform(h, h, K), rel=1e-12)
    # raw discretisation asymmetry before symmetrising is a quadrature diagnostic
    assert ro.RadialResolvent.on(g, K).asymmetry < 1e-4


def test_quadform_grid_mismatch():
    g1 = ro.make_grid(CTX3, 1.0)
    g2 = ro.make_grid(CTX3, 1.0)
    with pytest.raises(ShapeError):
        ro.quadform(ro.RadialFunction(g1, np.ones(g1.n)), ro.RadialFunction(g2, np.ones(g2.n)), ro.newton_kernel(CTX3))


_HLS_GRID = {}


def _hls_grid(N):
    if N not in _HLS_GRID:
        ctx = DimensionContext(N)
        _HLS_GRID[N] = ro.make_grid(ctx, 4.0, ro.PanelSpec(inner_levels=8, nodes_per_panel=10))
    return _HLS_GRID[N]


@given(
    st.integers(3, 5),
    st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4),
    st.floats(0.2, 2.0),
)
def test_hls_inequality_random_profiles(N, coeffs, width):
    g = _hls_grid(N)
    ctx = g.ctx
    r = g.nodes
    vals = sum(c * np.exp(-(((r - k) / width) ** 2)) for k, c in enumerate(coeffs)) * instanton.cutoff(r / 2.0)
    if not np.any(vals > 0):
        return
    f = ro.RadialFunction(g, vals)
    lhs = ro.quadform(f, f, ro.newton_kernel(ctx))
    rhs = ro.lp_norm(f, ctx.two_plus) ** 2 / dualvar.sobolev_constant(ctx)
    assert lhs <= rhs * (1 + 1e-8)


@given(st.floats(0.2, 3.0), st.floats(0.0, 6.0))
def test_three_dimensional_kernel_domination(width, shift):
    g = _hls_grid(3)
    r = g.nodes
    f = ro.RadialFunction(g, np.exp(-(((r - shift) / width) ** 2)) * np.sin(2 * r))
    a = abs(f)
    assert ro.quadform(a, a, ro.psi_kernel(CTX3)) <= ro.quadform(a, a, ro.newton_kernel(CTX3))
    assert ro.quadform(a, a, ro.abs_psi_kernel(CTX3)) <= ro.quadform(a, a, ro.newton_kernel(CTX3)) * (1 + 1e-10)


def test_dump_csv(tmp_path):
    path = tmp_path / "f.csv"
    ro.dump_csv(path, {"r": [1.0, 2.0], "f": [0.5, 0.25]})
    lines = path.read_text().splitlines()
    assert lines == ["r,f", "1.0,0.5", "2.0,0.25"]
