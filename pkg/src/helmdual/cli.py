"""Command-line entry point: ``helmdual <subcommand> [--config PATH] [--out DIR]``.

Every subcommand reads an optional JSON config, validates it completely
before doing any work, and writes CSV/JSON files into ``--out``.  Exit codes:
0 on completed runs (negative findings included), 2 for usage or config
errors, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dualvar, fundsol, instanton
from . import radialops as ro
from . import solver
from .errors import (
    ConfigError,
    DegenerateInitError,
    DomainError,
    PreconditionError,
    RangeError,
    UnsupportedOrderError,
    WindowError,
)
from .fundsol import DimensionContext

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
USER_ERRORS = (ConfigError, DomainError, RangeError, PreconditionError, DegenerateInitError, WindowError, UnsupportedOrderError)

COMMANDS = ("fundsol-table", "certify-bounds", "sobolev", "gap", "solve", "nonexist3d", "farfield")

# accepted config keys per command (besides "command" and "dimension")
KEYS = {
    "fundsol-table": {"r_min", "r_max", "n"},
    "certify-bounds": {"r_lo", "r_hi", "n_samples"},
    "sobolev": {"coefficient"},
    "gap": {"coefficient", "alpha", "eps_list", "nodes"},
    "solve": {"coefficient", "backend", "grid", "init", "params"},
    "nonexist3d": {"coefficient", "alpha", "eps_list", "v1"},
    "farfield": {"source_width", "source_radius", "r_window", "n_samples"},
}
DEFAULT_N = {"nonexist3d": 3, "farfield": 3}


@dataclass
class RunConfig:
    command: str
    dimension: int
    options: dict = field(default_factory=dict)

    @property
    def ctx(self) -> DimensionContext:
        return DimensionContext(self.dimension)

    def get(self, key, default=None):
        return self.options.get(key, default)


def load_config(command: str, path: str | None, dimension: int | None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    cmd = raw.pop("command", command)
    if cmd != command:
        raise ConfigError(f"config is for {cmd!r}, not {command!r}")
    n = raw.pop("dimension", DEFAULT_N.get(command, 3))
    if dimension is not None:
        n = dimension
    if not isinstance(n, int) or isinstance(n, bool):
        raise ConfigError(f"dimension must be an integer, got {n!r}")
    unknown = set(raw) - KEYS[command]
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
    cfg = RunConfig(command, n, raw)
    cfg.ctx  # validates N in [3, 8]
    return cfg


# output helpers ------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, columns: dict) -> None:
    names = list(columns)
    cols = [np.asarray(columns[k]).ravel() for k in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([repr(float(x)) for x in row])


def _float(cfg: RunConfig, key: str, default: float) -> float:
    val = cfg.get(key, default)
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise ConfigError(f"{key} must be a finite number")
    return float(val)


def _int(cfg: RunConfig, key: str, default: int) -> int:
    val = cfg.get(key, default)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{key} must be an integer")
    return val


def _eps_list(cfg: RunConfig):
    eps = cfg.get("eps_list")
    if eps is None:
        return None
    if not isinstance(eps, list) or not eps or not all(isinstance(e, (int, float)) and e > 0 for e in eps):
        raise ConfigError("eps_list must be a nonempty list of positive numbers")
    return [float(e) for e in eps]


# commands: each returns a callable doing the work, so --dry-run can stop after validation


def prep_fundsol_table(cfg: RunConfig):
    ctx = cfg.ctx
    top = fundsol.admissible_radius(ctx)
    r_min = _float(cfg, "r_min", 1e-4)
    r_max = _float(cfg, "r_max", 3.0 if ctx.N == 3 else 0.9 * top)
    n = _int(cfg, "n", 200)
    if not 0.0 < r_min < r_max < top or n < 2:
        raise RangeError(f"need 0 < r_min < r_max < {top:.6f} and n >= 2")

    def run(out: Path):
        r = np.geomspace(r_min, r_max, n)
        write_csv(out / f"fundsol_N{ctx.N}.csv", fundsol.tabulate(ctx, r))
        cert = fundsol.certify_difference_bounds(ctx, r_min, r_max, n)
        write_json(out / f"bound_certificate_N{ctx.N}.json", cert.as_dict())
        print(f"N={ctx.N}: kappa1_hat={cert.kappa1_hat:.10g} kappa2_hat={cert.kappa2_hat:.10g} valid={cert.valid}")

    return run


def prep_certify_bounds(cfg: RunConfig):
    ctx = cfg.ctx
    top = fundsol.admissible_radius(ctx)
    r_lo = _float(cfg, "r_lo", 1e-4)
    r_hi = _float(cfg, "r_hi", 3.0 if ctx.N == 3 else 0.9 * top)
    n = _int(cfg, "n_samples", 1000)
    fundsol._check_range(ctx, r_lo, r_hi)

    def run(out: Path):
        cert = fundsol.certify_difference_bounds(ctx, r_lo, r_hi, n)
        write_json(out / f"bound_certificate_N{ctx.N}.json", cert.as_dict())
        print(json.dumps(_clean(cert.as_dict()), sort_keys=True))

    return run


def prep_sobolev(cfg: RunConfig):
    ctx = cfg.ctx
    Q = dualvar.coefficient_from_spec(cfg.get("coefficient"))

    def run(out: Path):
        S = dualvar.sobolev_constant(ctx)
        S_grad = dualvar.sobolev_constant_gradient(ctx)
        L = dualvar.l_q_star(Q, ctx)
        write_json(out / f"sobolev_N{ctx.N}.json", {"N": ctx.N, "S": S, "S_gradient_path": S_grad, "L_Q_star": L, "Q_sup": Q.sup_norm})
        print(f"S = {S:.12g}")
        print(f"L_Q* = {L:.12g}")

    return run


def prep_gap(cfg: RunConfig, threads: int):
    ctx = cfg.ctx
    Q = dualvar.coefficient_from_spec(cfg.get("coefficient"))
    alpha = _float(cfg, "alpha", 0.5)
    nodes = _int(cfg, "nodes", instanton.DEFAULT_NODES)
    eps = _eps_list(cfg)
    instanton.InstantonParams(1e-2 if eps is None else eps[0], alpha)
    if eps is not None and max(eps) > alpha * alpha:
        raise PreconditionError("every eps must satisfy eps <= alpha^2")

    def run(out: Path):
        res = instanton.strict_gap_scan(Q, ctx, eps, alpha, threads=threads, nodes=nodes)
        res.write(out / f"gap_scan_N{ctx.N}.csv", out / f"gap_certificate_N{ctx.N}.json")
        b = res.best
        print(f"status: {res.status}")
        print(f"best eps={b.eps:.6g} upper_bound={b.upper_bound:.12g} L*={b.l_star:.12g} gap={b.gap:.6g} error_bar={b.error_bar:.3g}")

    return run


def _init_field(spec: dict | None, grid_or_field, ctx):
    spec = {"kind": "gaussian"} if spec is None else dict(spec)
    kind = spec.pop("kind", "gaussian")
    amp = float(spec.pop("amplitude", 1.0))
    width = float(spec.pop("width", 1.0))
    if spec:
        raise ConfigError(f"unknown init parameters {sorted(spec)}")
    if kind == "zero":
        fn = lambda r: np.zeros_like(r)  # noqa: E731
    elif kind == "gaussian":
        fn = lambda r: amp * np.exp(-((r / width) ** 2))  # noqa: E731
    else:
        raise ConfigError(f"unknown init kind {kind!r}")
    if isinstance(grid_or_field, ro.RadialGrid):
        return ro.RadialFunction(grid_or_field, fn(grid_or_field.nodes))
    return grid_or_field.with_values(fn(grid_or_field.radius()))


def prep_solve(cfg: RunConfig):
    ctx = cfg.ctx
    Q = dualvar.coefficient_from_spec(cfg.get("coefficient", {"kind": "smoothed_ball", "radius": 5.0, "width": 1.0}))
    backend = cfg.get("backend", "radial")
    gspec = dict(cfg.get("grid") or {})
    pspec = dict(cfg.get("params") or {})
    bad = set(pspec) - {"max_iter", "tol", "damping"}
    if bad:
        raise ConfigError(f"unknown solve params {sorted(bad)}")
    params = solver.SolveParams(backend=None if backend == "radial" else backend, **pspec)
    if backend == "radial":
        R = float(gspec.pop("R_max", 6.0))
        spec = ro.PanelSpec.from_dict({"inner_levels": 8, **gspec})
        grid = ro.make_grid(ctx, R, spec)
        if not Q.is_radial:
            raise ConfigError("radial backend needs a radial coefficient")
        v0 = _init_field(cfg.get("init"), grid, ctx)
    elif backend in solver.BACKENDS:
        L = float(gspec.pop("L", 8.0))
        M = int(gspec.pop("M", 32))
        if gspec:
            raise ConfigError(f"unknown Cartesian grid keys {sorted(gspec)}")
        blank = solver.CartesianField(ctx, L, M, np.zeros((M,) * ctx.N))
        v0 = _init_field(cfg.get("init"), blank, ctx)
    else:
        raise ConfigError(f"unknown backend {backend!r}")
    if not np.any(v0.values != 0.0):
        raise DegenerateInitError("initial guess is identically zero")

    def run(out: Path):
        rep = solver.fixed_point_solve(Q, v0, params)
        summary = rep.summary()
        summary.update({"N": ctx.N, "backend": backend, "coefficient": Q.label})
        write_json(out / "solve_report.json", summary)
        write_csv(out / "residual_history.csv", {"iteration": np.arange(1, len(rep.residual_history) + 1), "relative_residual": rep.residual_history})
        solver.save_checkpoint(out / "dual_state", rep.final_state.v, {"coefficient": Q.label, "backend": backend, "params": pspec})
        print(f"status: {rep.status} after {rep.iterations} iterations; energy={rep.energy:.12g} mp_bound={rep.mp_bound:.12g}")

    return run


def prep_nonexist3d(cfg: RunConfig):
    if cfg.dimension != 3:
        raise ConfigError("nonexist3d runs in dimension 3 only")
    Q = dualvar.coefficient_from_spec(cfg.get("coefficient"))
    fam = {"alpha": _float(cfg, "alpha", 0.5), "v1": bool(cfg.get("v1", True))}
    eps = _eps_list(cfg)
    if eps is not None:
        fam["eps_list"] = eps

    def run(out: Path):
        rep = solver.n3_nonexistence_probe(Q, fam)
        write_json(out / "nonexist3d.json", rep)
        rows = rep["rows"]
        write_csv(out / "nonexist3d.csv", {k: [r[k] for r in rows] for k in rows[0]})
        for r in rows:
            print(f"eps={r['eps']:.4e} mp_bound-L*={r['excess']:.6e} Lambda-Psi margin={r['form_margin']:.6e}")

    return run


def prep_farfield(cfg: RunConfig):
    ctx = cfg.ctx
    width = _float(cfg, "source_width", 0.3)
    radius = _float(cfg, "source_radius", 10.0 * width)
    window = cfg.get("r_window", [20.0, 40.0])
    n = _int(cfg, "n_samples", 400)
    if not (isinstance(window, list) and len(window) == 2):
        raise ConfigError("r_window must be a pair")
    if not 0.0 < window[0] < window[1] or window[0] <= radius:
        raise WindowError(f"window {window} must lie beyond the source radius {radius}")

    def run(out: Path):
        grid = ro.make_grid(ctx, radius, ro.PanelSpec(inner_levels=8))
        f = ro.RadialFunction(grid, np.exp(-((grid.nodes / width) ** 2)))
        r = np.linspace(window[0], window[1], n)
        u = solver.radial_potential_at(f, r)
        fit = solver.farfield_fit((r, u), ctx, window, source_radius=radius)
        d = fit.as_dict()
        d["relative_rms"] = fit.relative_rms
        write_json(out / f"farfield_N{ctx.N}.json", d)
        write_csv(out / f"farfield_N{ctx.N}.csv", {"r": r, "u": u, "u_scaled": u * r ** ((ctx.N - 1) / 2.0)})
        print(f"amplitude={fit.amplitude:.10g} phase={fit.phase:.6g} relative_rms={fit.relative_rms:.3e}")

    return run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="helmdual", description="Dual variational experiments for the critical Helmholtz equation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads for parameter sweeps")
        p.add_argument("--dry-run", action="store_true", help="validate the config and exit")
        p.add_argument("-N", "--dimension", type=int, help="override the config dimension")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = load_config(args.command, args.config, args.dimension)
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        prep = {
            "fundsol-table": prep_fundsol_table,
            "certify-bounds": prep_certify_bounds,
            "sobolev": prep_sobolev,
            "gap": lambda c: prep_gap(c, args.threads),
            "solve": prep_solve,
            "nonexist3d": prep_nonexist3d,
            "farfield": prep_farfield,
        }[args.command]
        run = prep(cfg)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TypeError as exc:
        print(f"error: bad config value: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dry_run:
        print(f"{args.command}: config ok")
        return EXIT_OK
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        run(out)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
