"""Command-line surface: CSV in, estimates/bootstrap/simulation/plots out.

Subcommands
-----------
estimate          fit the model at one or more quantiles, emit a JSON report
bootstrap         estimate plus nonparametric-bootstrap confidence intervals
simulate          run a Monte Carlo study from a config, emit JSON and CSV
plot-fixed-point  emit the univariate sweep-map curve as SVG and CSV
diagnose          print the sweep-map Jacobian and a contraction verdict

Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver
failure.  Every option can also be given in a config file of key=value
lines (keys equal the long option names without the leading dashes);
explicit flags override the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .bootstrap import bootstrap_estimate, percentile_ci
from .errors import (
    CovarianceNotPDError,
    InsufficientDrawsError,
    IvqrError,
    TooManyFailuresError,
)
from .fixpoint import (
    SolverOptions,
    algorithms,
    default_algorithm,
    diagnose_contraction,
    estimate,
    fit,
    fixed_point_curve,
    solve_brent,
)
from .model import Sample, prepare, tsls_with_se, unreparametrize
from .simulate import (
    AppLikeConfig,
    LocationScaleConfig,
    McConfig,
    run_monte_carlo,
)

_TIMING_NOTE = "wall_seconds is wall-clock, not deterministic"
_MIN_BOOT_DRAWS = 20
_PLOT_MAX_TAUS = 3
_PLOT_COLORS = ("#1f77b4", "#d62728", "#2ca02c")


class _ConfigError(Exception):
    pass


class _DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration plumbing


def _parse_config_file(path: str) -> dict[str, str]:
    """Flat key=value lines; blank lines and #-comments ignored."""
    out: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise _ConfigError(
                        f"{path}:{lineno}: expected key=value, got {line!r}"
                    )
                key, value = line.split("=", 1)
                out[key.strip()] = value.strip()
    except OSError as exc:
        raise _ConfigError(f"cannot read config file {path}: {exc}") from exc
    return out


def _split_names(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(part) for part in _split_names(text)]
    except ValueError as exc:
        raise _ConfigError(f"{what} must be comma-separated numbers") from exc


def _parse_bool(text: str, what: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise _ConfigError(f"{what} must be true or false, got {text!r}")


class _Resolver:
    """Merges command-line flags over config-file values over defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        path = getattr(args, "config", None)
        self.file = _parse_config_file(path) if path else {}

    def get(self, key: str, default=None, cast=None):
        flag = getattr(self.args, key.replace("-", "_"), None)
        value = flag if flag is not None else self.file.get(key)
        if value is None:
            return default
        if cast is not None and isinstance(value, str):
            try:
                return cast(value)
            except ValueError as exc:
                raise _ConfigError(f"bad value for {key}: {value!r}") from exc
        return value


# ---------------------------------------------------------------------------
# CSV ingestion


def read_table(path: str) -> tuple[list[str], dict[str, np.ndarray]]:
    """RFC-4180 CSV with a mandatory header row; all cells numeric."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise _DataError(f"{path} is empty") from None
            header = [name.strip() for name in header]
            if len(set(header)) != len(header):
                raise _DataError(f"{path} has duplicate column names")
            rows = []
            for lineno, row in enumerate(reader, 2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise _DataError(
                        f"{path}:{lineno}: {len(row)} fields, "
                        f"header has {len(header)}"
                    )
                try:
                    rows.append([float(cell) for cell in row])
                except ValueError:
                    raise _DataError(
                        f"{path}:{lineno}: non-numeric cell"
                    ) from None
    except OSError as exc:
        raise _DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise _DataError(f"{path} has a header but no data rows")
    data = np.asarray(rows, dtype=float)
    if any(not name for name in header):
        raise _DataError(f"{path} has an unnamed column in the header")
    return header, {name: data[:, j] for j, name in enumerate(header)}


@dataclass
class RunConfig:
    """Resolved data-facing configuration shared by the data commands."""

    input: str
    y: str
    d: list[str]
    x: list[str]
    z: list[str]
    taus: list[float]
    algorithm: str | None
    intercept: bool
    solver: SolverOptions
    output_json: str | None = None
    output_csv: str | None = None

    def __post_init__(self):
        roles = [self.y, *self.d, *self.x, *self.z]
        if len(set(roles)) != len(roles):
            raise _ConfigError("column roles y/d/x/z must be disjoint")
        if not self.d:
            raise _ConfigError("at least one endogenous column (--d) required")
        if not self.z:
            raise _ConfigError("at least one instrument column (--z) required")
        if not self.x and not self.intercept:
            raise _ConfigError(
                "--no-intercept requires at least one exogenous column"
            )
        if not self.taus:
            raise _ConfigError("at least one quantile (--taus) required")
        if any(not 0.0 < t < 1.0 for t in self.taus):
            raise _ConfigError("every tau must lie strictly between 0 and 1")
        if len(set(self.taus)) != len(self.taus):
            raise _ConfigError("taus must be distinct")


def _solver_options(res: _Resolver) -> SolverOptions:
    kwargs = {}
    tol = res.get("tol", cast=float)
    if tol is not None:
        kwargs["tol"] = float(tol)
    max_iter = res.get("max-iter", cast=int)
    if max_iter is not None:
        kwargs["max_iter"] = int(max_iter)
    seed = res.get("seed", cast=int)
    if seed is not None:
        kwargs["seed"] = int(seed)
    canon = res.get("no-canonicalize", cast=lambda s: _parse_bool(s, "no-canonicalize"))
    if canon:
        kwargs["canonicalize"] = False
    try:
        return SolverOptions(**kwargs)
    except ValueError as exc:
        raise _ConfigError(str(exc)) from exc


def _run_config(res: _Resolver) -> RunConfig:
    input_path = res.get("input")
    if not input_path:
        raise _ConfigError("--input CSV path is required")
    y = res.get("y")
    if not y:
        raise _ConfigError("--y column name is required")
    taus = res.get("taus", cast=lambda s: _parse_floats(s, "taus"))
    algorithm = res.get("algorithm")
    if algorithm is not None and algorithm not in algorithms():
        raise _ConfigError(
            f"unknown algorithm {algorithm!r}; choose from {algorithms()}"
        )
    return RunConfig(
        input=input_path,
        y=y,
        d=_split_names(res.get("d", default="")),
        x=_split_names(res.get("x", default="")),
        z=_split_names(res.get("z", default="")),
        taus=[float(t) for t in (taus if taus is not None else [0.5])],
        algorithm=algorithm,
        intercept=not bool(
            res.get(
                "no-intercept",
                default=False,
                cast=lambda s: _parse_bool(s, "no-intercept"),
            )
        ),
        solver=_solver_options(res),
        output_json=res.get("output-json"),
        output_csv=res.get("output-csv"),
    )


def _build_sample(config: RunConfig) -> tuple[Sample, list[str], list[str]]:
    """Returns (sample, theta1 coefficient names, theta_end names)."""
    header, table = read_table(config.input)
    for role, names in (
        ("y", [config.y]),
        ("d", config.d),
        ("x", config.x),
        ("z", config.z),
    ):
        for name in names:
            if name not in table:
                raise _ConfigError(
                    f"column {name!r} for role {role} not in {config.input} "
                    f"(header: {', '.join(header)})"
                )
    n = table[config.y].shape[0]
    x_cols = [table[name] for name in config.x]
    x_names = list(config.x)
    if config.intercept:
        x_cols = [np.ones(n)] + x_cols
        x_names = ["(intercept)"] + x_names
    try:
        sample = Sample(
            y=table[config.y],
            d=np.column_stack([table[name] for name in config.d]),
            x=np.column_stack(x_cols),
            z=np.column_stack([table[name] for name in config.z]),
        )
    except IvqrError as exc:
        raise _DataError(str(exc)) from exc
    except ValueError as exc:
        raise _DataError(str(exc)) from exc
    return sample, x_names, list(config.d)


# ---------------------------------------------------------------------------
# serialization helpers


def _py(obj):
    """Recursively convert numpy scalars/arrays for JSON emission."""
    if isinstance(obj, np.ndarray):
        return [_py(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _py(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_py(v) for v in obj]
    return obj


def _emit_json(report: dict, path: str | None) -> None:
    text = json.dumps(_py(report), indent=2, sort_keys=False)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _fmt(value) -> str:
    """Full round-trip precision for CSV cells."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(cell) for cell in row])


def _theta_dict(theta, x_names: list[str], d_names: list[str]) -> dict:
    return {
        "tau": float(theta.tau),
        "theta1_names": x_names,
        "theta1": theta.theta1,
        "theta_end_names": d_names,
        "theta_end": theta.theta_end,
    }


def _fail_if_unconverged(results: list[tuple[float, object]]) -> None:
    for tau, result in results:
        if not result.converged:
            raise _SolverFailure(
                f"estimation failed at tau={tau:g}: status={result.status}"
                + (f" ({result.message})" if result.message else "")
            )


class _SolverFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# commands


def cmd_estimate(res: _Resolver) -> int:
    config = _run_config(res)
    sample, x_names, d_names = _build_sample(config)
    algorithm = config.algorithm
    start_time = time.perf_counter()
    results = []
    for tau in config.taus:
        working, record = prepare(sample)
        algo = algorithm or default_algorithm(working)
        try:
            result = estimate(working, tau, algo, config.solver)
        except ValueError as exc:
            raise _ConfigError(str(exc)) from exc
        diag = diagnose_contraction(working, tau, result.theta)
        result.theta = unreparametrize(result.theta, record)
        results.append((tau, result, diag, algo))
    wall = time.perf_counter() - start_time

    report = {
        "command": "estimate",
        "input": config.input,
        "columns": {
            "y": config.y,
            "d": config.d,
            "x": config.x,
            "z": config.z,
        },
        "intercept": config.intercept,
        "algorithm": results[0][3] if algorithm is None else algorithm,
        "solver": {
            "tol": config.solver.tol,
            "max_iter": config.solver.max_iter,
            "seed": config.solver.seed,
            "canonicalize": config.solver.canonicalize,
        },
        "results": [
            {
                "tau": tau,
                "status": r.status,
                "converged": r.converged,
                "residual": r.residual,
                "iterations": r.iterations,
                "message": r.message,
                "theta": _theta_dict(r.theta, x_names, d_names),
                "moments": r.moments,
                "diagnostics": {
                    "jacobian": diag.jacobian,
                    "spectral_radius_proxy": diag.spectral_radius_proxy,
                    "verdict": "pass" if diag.spectral_radius_proxy < 1.0 else "warn",
                },
            }
            for tau, r, diag, _ in results
        ],
        "wall_seconds": wall,
        "timing_note": _TIMING_NOTE,
    }
    _emit_json(report, config.output_json)
    if config.output_csv:
        rows = []
        for tau, r, _, _ in results:
            for name, value in zip(x_names, r.theta.theta1):
                rows.append([tau, name, "exogenous", value])
            for name, value in zip(d_names, r.theta.theta_end):
                rows.append([tau, name, "endogenous", value])
        _write_csv(config.output_csv, ["tau", "name", "block", "estimate"], rows)
    _fail_if_unconverged([(tau, r) for tau, r, _, _ in results])
    return 0


def cmd_bootstrap(res: _Resolver) -> int:
    config = _run_config(res)
    b = int(res.get("b", default=200, cast=int))
    level = float(res.get("level", default=0.95, cast=float))
    workers = res.get("workers", cast=int)
    seed = int(res.get("seed", default=0, cast=int))
    draws_csv = res.get("draws-csv")
    if not 0.0 < level < 1.0:
        raise _ConfigError("--level must lie strictly between 0 and 1")
    if b < _MIN_BOOT_DRAWS:
        raise _ConfigError(
            f"--B {b} gives too few draws for percentile intervals "
            f"(need at least {_MIN_BOOT_DRAWS})"
        )
    sample, x_names, d_names = _build_sample(config)
    stacked_names = x_names + d_names

    start_time = time.perf_counter()
    per_tau = []
    for tau in config.taus:
        try:
            boot = bootstrap_estimate(
                sample,
                tau,
                algorithm=config.algorithm,
                b=b,
                seed=seed,
                opts=config.solver,
                workers=int(workers) if workers is not None else None,
            )
        except ValueError as exc:
            raise _ConfigError(str(exc)) from exc
        ci = percentile_ci(boot, level)
        per_tau.append((tau, boot, ci))
    wall = time.perf_counter() - start_time

    report = {
        "command": "bootstrap",
        "input": config.input,
        "columns": {
            "y": config.y,
            "d": config.d,
            "x": config.x,
            "z": config.z,
        },
        "intercept": config.intercept,
        "algorithm": per_tau[0][1].algorithm,
        "b": b,
        "level": level,
        "seed": seed,
        "results": [
            {
                "tau": tau,
                "point": _theta_dict(boot.point, x_names, d_names),
                "names": stacked_names,
                "ci_lower": ci[:, 0],
                "ci_upper": ci[:, 1],
                "successful_draws": int(boot.draws.shape[0]),
                "failures": boot.failures,
                "statuses": boot.statuses,
            }
            for tau, boot, ci in per_tau
        ],
        "wall_seconds": wall,
        "timing_note": _TIMING_NOTE,
    }
    _emit_json(report, config.output_json)
    if config.output_csv:
        rows = []
        for tau, boot, ci in per_tau:
            point = boot.point.stacked()
            for k, name in enumerate(stacked_names):
                rows.append([tau, name, point[k], ci[k, 0], ci[k, 1]])
        _write_csv(
            config.output_csv,
            ["tau", "name", "estimate", "ci_lower", "ci_upper"],
            rows,
        )
    if draws_csv:
        rows = []
        for tau, boot, _ in per_tau:
            for draw in boot.draws:
                rows.append([tau, *draw])
        _write_csv(draws_csv, ["tau", *stacked_names], rows)
    return 0


_DGP_KINDS = ("location-scale", "app-like")


def _dgp_config(res: _Resolver):
    kind = res.get("dgp", default="location-scale")
    if kind not in _DGP_KINDS:
        raise _ConfigError(f"--dgp must be one of {_DGP_KINDS}")
    n = int(res.get("n", default=1000, cast=int))
    # the per-replication streams come from McConfig.seed; the DGP's own
    # seed only matters for one-shot generation and stays at its default
    try:
        if kind == "location-scale":
            return LocationScaleConfig(
                n=n,
                d_d=int(res.get("d-d", default=1, cast=int)),
                design=res.get("design", default="symmetric"),
            )
        return AppLikeConfig(
            n=n,
            extra_endogenous=int(res.get("extra-endogenous", default=0, cast=int)),
        )
    except (ValueError, CovarianceNotPDError) as exc:
        raise _ConfigError(str(exc)) from exc


def cmd_simulate(res: _Resolver) -> int:
    dgp = _dgp_config(res)
    estimators = _split_names(res.get("estimators", default="brent"))
    for name in estimators:
        if name not in algorithms():
            raise _ConfigError(
                f"unknown estimator {name!r}; choose from {algorithms()}"
            )
    taus = res.get("taus", cast=lambda s: _parse_floats(s, "taus"))
    taus = [float(t) for t in (taus if taus is not None else [0.5])]
    if any(not 0.0 < t < 1.0 for t in taus):
        raise _ConfigError("every tau must lie strictly between 0 and 1")
    reps = int(res.get("reps", default=100, cast=int))
    bootstrap_b = res.get("bootstrap-b", cast=int)
    levels = res.get("levels", cast=lambda s: _parse_floats(s, "levels"))
    workers = res.get("workers", cast=int)
    seed = int(res.get("seed", default=0, cast=int))
    solver = _solver_options(res)
    try:
        mc = McConfig(
            dgp=dgp,
            estimators=tuple(estimators),
            taus=tuple(taus),
            reps=reps,
            bootstrap_b=int(bootstrap_b) if bootstrap_b is not None else None,
            levels=tuple(float(v) for v in levels) if levels is not None else (0.9, 0.95),
            seed=seed,
            workers=int(workers) if workers is not None else None,
            solver_opts=solver,
            bootstrap_opts=solver,
        )
    except ValueError as exc:
        raise _ConfigError(str(exc)) from exc

    start_time = time.perf_counter()
    report = run_monte_carlo(mc)
    wall = time.perf_counter() - start_time

    payload = {"command": "simulate", **report.to_json_dict()}
    payload["wall_seconds"] = wall
    payload["timing_note"] = _TIMING_NOTE
    _emit_json(payload, res.get("output-json"))
    out_csv = res.get("output-csv")
    if out_csv:
        header, rows = report.csv_rows()
        _write_csv(out_csv, header, rows)
    return 0


def _svg_curve_plot(
    curves: list[tuple[float, np.ndarray]],
    crossings: list[tuple[float, float]],
    path: str,
) -> None:
    """Minimal standalone SVG: sweep-map curves, the identity line, and one
    marker per crossing."""
    width, height, margin = 640, 480, 56
    xs = np.concatenate([c[:, 0] for _, c in curves])
    ys = np.concatenate([c[:, 1] for _, c in curves])
    lo = float(min(xs.min(), ys.min()))
    hi = float(max(xs.max(), ys.max()))
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    span = hi - lo

    def sx(v: float) -> float:
        return margin + (v - lo) / span * (width - 2 * margin)

    def sy(v: float) -> float:
        return height - margin - (v - lo) / span * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        # axes
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<text x="{sx(lo)}" y="{height - margin + 20}" font-size="12">{lo:.3g}</text>',
        f'<text x="{sx(hi) - 30}" y="{height - margin + 20}" font-size="12">{hi:.3g}</text>',
        f'<text x="{width / 2 - 10}" y="{height - 12}" font-size="13">t</text>',
        f'<text x="{10}" y="{height / 2}" font-size="13">M(t)</text>',
        # identity line
        f'<line x1="{sx(lo)}" y1="{sy(lo)}" x2="{sx(hi)}" y2="{sy(hi)}" '
        f'stroke="#888" stroke-dasharray="6,4"/>',
    ]
    for k, (tau, curve) in enumerate(curves):
        color = _PLOT_COLORS[k % len(_PLOT_COLORS)]
        if curve.shape[0] == 1:
            parts.append(
                f'<circle cx="{sx(curve[0, 0])}" cy="{sy(curve[0, 1])}" '
                f'r="3" fill="{color}"/>'
            )
        else:
            points = " ".join(
                f"{sx(p):.2f},{sy(q):.2f}" for p, q in curve
            )
            parts.append(
                f'<polyline points="{points}" fill="none" stroke="{color}" '
                f'stroke-width="1.5"/>'
            )
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 16 * k + 12}" '
            f'font-size="12" fill="{color}">tau={tau:g}</text>'
        )
    for k, (tau, root) in enumerate(crossings):
        color = _PLOT_COLORS[k % len(_PLOT_COLORS)]
        parts.append(
            f'<circle cx="{sx(root)}" cy="{sy(root)}" r="4" fill="none" '
            f'stroke="{color}" stroke-width="2"/>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def cmd_plot_fixed_point(res: _Resolver) -> int:
    config = _run_config(res)
    if len(config.taus) > _PLOT_MAX_TAUS:
        raise _ConfigError(
            f"plot-fixed-point draws at most {_PLOT_MAX_TAUS} quantiles"
        )
    points = int(res.get("points", default=41, cast=int))
    if points < 1:
        raise _ConfigError("--points must be at least 1")
    out_svg = res.get("output-svg", default="fixed_point.svg")
    out_csv = config.output_csv or "fixed_point.csv"

    sample, _, _ = _build_sample(config)
    working, _ = prepare(sample)
    if working.d_d != 1:
        raise _ConfigError(
            "plot-fixed-point requires exactly one endogenous column"
        )

    bracket = res.get("bracket")
    if bracket is not None:
        values = _parse_floats(bracket, "bracket")
        if len(values) != 2 or values[0] >= values[1]:
            raise _ConfigError("--bracket must be lo,hi with lo < hi")
        lo, hi = values
    else:
        theta, se = tsls_with_se(working, config.taus[0])
        center = float(theta.theta_end[0])
        half = 5.0 * float(se[working.d_x])
        lo, hi = center - half, center + half

    grid = np.linspace(lo, hi, points)
    curves = []
    crossings = []
    rows = []
    for tau in config.taus:
        curve = fixed_point_curve(working, tau, grid)
        curves.append((tau, curve))
        for t_val, m_val in curve:
            rows.append([tau, t_val, m_val])
        result = solve_brent(working, tau, config.solver)
        if not result.converged:
            raise _SolverFailure(
                f"crossing search failed at tau={tau:g}: "
                f"status={result.status}"
            )
        crossings.append((tau, float(result.theta.theta_end[0])))

    _write_csv(out_csv, ["tau", "theta2", "m"], rows)
    _svg_curve_plot(curves, crossings, out_svg)
    print(f"wrote {out_csv} and {out_svg}")
    return 0


def cmd_diagnose(res: _Resolver) -> int:
    config = _run_config(res)
    sample, x_names, d_names = _build_sample(config)
    reports = []
    for tau in config.taus:
        working, record = prepare(sample)
        algo = config.algorithm or default_algorithm(working)
        try:
            result = estimate(working, tau, algo, config.solver)
        except ValueError as exc:
            raise _ConfigError(str(exc)) from exc
        diag = diagnose_contraction(working, tau, result.theta)
        result.theta = unreparametrize(result.theta, record)
        verdict = "pass" if diag.spectral_radius_proxy < 1.0 else "warn"
        print(f"tau={tau:g}  status={result.status}  algorithm={algo}")
        print("  sweep-map Jacobian (endogenous block):")
        for row in diag.jacobian:
            print("    " + "  ".join(f"{v: .6f}" for v in row))
        print(f"  spectral radius proxy: {diag.spectral_radius_proxy:.6f}")
        print(f"  verdict: {verdict}")
        reports.append(
            {
                "tau": tau,
                "status": result.status,
                "theta": _theta_dict(result.theta, x_names, d_names),
                "jacobian": diag.jacobian,
                "spectral_radius_proxy": diag.spectral_radius_proxy,
                "verdict": verdict,
            }
        )
        if not result.converged:
            raise _SolverFailure(
                f"estimation failed at tau={tau:g}: status={result.status}"
            )
    if config.output_json:
        _emit_json({"command": "diagnose", "results": reports}, config.output_json)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_data_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value config file; flags override")
    sub.add_argument("--input", help="input CSV (RFC 4180, header required)")
    sub.add_argument("--y", help="outcome column name")
    sub.add_argument("--d", help="endogenous column names, comma-separated")
    sub.add_argument("--x", help="exogenous column names, comma-separated")
    sub.add_argument("--z", help="instrument column names, comma-separated")
    sub.add_argument("--taus", help="quantiles, comma-separated (default 0.5)")
    sub.add_argument(
        "--algorithm",
        help=f"solver, one of {', '.join(algorithms())} (default by d count)",
    )
    sub.add_argument(
        "--no-intercept",
        action="store_const",
        const=True,
        help="do not prepend an intercept to the exogenous block",
    )
    sub.add_argument("--tol", type=float, help="fixed-point tolerance")
    sub.add_argument("--max-iter", type=int, help="iteration cap")
    sub.add_argument("--seed", type=int, help="solver / bootstrap seed")
    sub.add_argument(
        "--no-canonicalize",
        action="store_const",
        const=True,
        help="skip canonical re-anchoring of converged estimates",
    )
    sub.add_argument("--output-json", help="write the JSON report here")
    sub.add_argument("--output-csv", help="write the CSV table here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ivqr",
        description=(
            "Instrumental-variable quantile regression via convex "
            "best-response decentralization"
        ),
    )
    commands = parser.add_subparsers(dest="command", required=True)

    est = commands.add_parser("estimate", help="fit the model per quantile")
    _add_data_options(est)

    boot = commands.add_parser(
        "bootstrap", help="estimate with bootstrap confidence intervals"
    )
    _add_data_options(boot)
    boot.add_argument("--b", "--B", dest="b", type=int, help="bootstrap replications")
    boot.add_argument("--level", type=float, help="CI level (default 0.95)")
    boot.add_argument("--workers", type=int, help="worker pool cap")
    boot.add_argument("--draws-csv", help="dump raw bootstrap draws here")

    sim = commands.add_parser("simulate", help="Monte Carlo study")
    sim.add_argument("--config", help="key=value config file; flags override")
    sim.add_argument("--dgp", help="location-scale or app-like")
    sim.add_argument("--n", type=int, help="observations per replication")
    sim.add_argument("--d-d", type=int, help="endogenous regressors (location-scale)")
    sim.add_argument("--design", help="symmetric or asymmetric (location-scale)")
    sim.add_argument(
        "--extra-endogenous", type=int, help="extra endogenous columns (app-like)"
    )
    sim.add_argument("--estimators", help="comma-separated solver names")
    sim.add_argument("--taus", help="quantiles, comma-separated")
    sim.add_argument("--reps", type=int, help="Monte Carlo replications")
    sim.add_argument("--bootstrap-b", type=int, help="bootstrap size per rep")
    sim.add_argument("--levels", help="CI levels, comma-separated")
    sim.add_argument("--seed", type=int, help="replication seed")
    sim.add_argument("--workers", type=int, help="worker pool cap")
    sim.add_argument("--tol", type=float, help="fixed-point tolerance")
    sim.add_argument("--max-iter", type=int, help="iteration cap")
    sim.add_argument(
        "--no-canonicalize",
        action="store_const",
        const=True,
        help="skip canonical re-anchoring inside replications",
    )
    sim.add_argument("--output-json", help="write the JSON report here")
    sim.add_argument("--output-csv", help="write the CSV table here")

    plot = commands.add_parser(
        "plot-fixed-point", help="sweep-map curve data and SVG"
    )
    _add_data_options(plot)
    plot.add_argument("--points", type=int, help="grid points (default 41)")
    plot.add_argument("--bracket", help="lo,hi grid range (default TSLS +- 5 SE)")
    plot.add_argument("--output-svg", help="SVG path (default fixed_point.svg)")

    diag = commands.add_parser(
        "diagnose", help="sweep-map Jacobian and contraction verdict"
    )
    _add_data_options(diag)

    return parser


_COMMANDS = {
    "estimate": cmd_estimate,
    "bootstrap": cmd_bootstrap,
    "simulate": cmd_simulate,
    "plot-fixed-point": cmd_plot_fixed_point,
    "diagnose": cmd_diagnose,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        res = _Resolver(args)
        return _COMMANDS[args.command](res)
    except _ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InsufficientDrawsError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CovarianceNotPDError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except _SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 4
    except TooManyFailuresError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 4
    except IvqrError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
