"""Simulation designs with known quantile coefficients, plus the Monte Carlo
harness that turns them into bias/RMSE/coverage/timing tables.

Two families of data-generating processes:

* location-scale: Y = g1 + g2*X + g3*D1 + g4*D2 + (g5 + g6*D1 + g7*D2)*U
  built from a Gaussian latent vector with configurable covariances, in a
  symmetric variant (every variable mapped through the normal CDF) and an
  asymmetric one (endogenous columns mapped through exp(2*xi)).  The true
  endogenous coefficients are g3 + g6*r(tau) and g4 + g7*r(tau) with
  r(tau) = tau (symmetric) or the normal quantile (asymmetric).

* application-like: a binary instrument, selection-driven binary treatment
  with a rank-dependent dollar-scale effect 5000 + 10000*U, synthetic
  income/age covariates, and a re-centered Gamma residual; optional extra
  endogenous columns with constant effects.

Every replication draws from its own RNG stream spawned from the root seed,
so results are reproducible regardless of scheduling.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .bootstrap import bootstrap_estimate, percentile_ci
from .errors import CovarianceNotPDError
from .fixpoint import SolverOptions, fit
from .model import Sample, Theta

_SYMMETRIC = "symmetric"
_ASYMMETRIC = "asymmetric"

# latent vector order: (U, D1, D2, Z1, Z2, X)
_LATENT_DIM = 6


@dataclass
class LocationScaleConfig:
    """Configuration of the location-scale designs.

    gamma defaults to all ones, with gamma4 = gamma7 = 0 when d_d = 1 (the
    second endogenous variable then never enters the outcome).  Covariances
    not listed are zero; variances are one.
    """

    n: int
    d_d: int = 1
    design: str = _SYMMETRIC
    gamma: tuple[float, ...] | None = None
    cov_ud1: float = 0.5
    cov_ud2: float = 0.5
    cov_d1z1: float = 0.8
    cov_d2z2: float = 0.4
    seed: int | np.random.SeedSequence = 0

    def __post_init__(self):
        if self.d_d not in (1, 2):
            raise ValueError(f"d_d must be 1 or 2, got {self.d_d}")
        if self.design not in (_SYMMETRIC, _ASYMMETRIC):
            raise ValueError(
                f"design must be {_SYMMETRIC!r} or {_ASYMMETRIC!r}, "
                f"got {self.design!r}"
            )
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.gamma is None:
            g = [1.0] * 7
            if self.d_d == 1:
                g[3] = g[6] = 0.0  # gamma4, gamma7
            self.gamma = tuple(g)
        else:
            self.gamma = tuple(float(v) for v in self.gamma)
            if len(self.gamma) != 7:
                raise ValueError("gamma must have 7 entries")
            if self.d_d == 1 and (self.gamma[3] or self.gamma[6]):
                raise ValueError(
                    "d_d=1 omits the second endogenous column from the "
                    "model; gamma4 and gamma7 must be zero"
                )

    def covariance(self) -> np.ndarray:
        c = np.eye(_LATENT_DIM)
        c[0, 1] = c[1, 0] = self.cov_ud1
        c[0, 2] = c[2, 0] = self.cov_ud2
        c[1, 3] = c[3, 1] = self.cov_d1z1
        c[2, 4] = c[4, 2] = self.cov_d2z2
        return c


def _cholesky_or_raise(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise CovarianceNotPDError(
            "configured latent covariance matrix is not positive definite"
        ) from None


def _rank_quantile(design: str, tau: float) -> float:
    return tau if design == _SYMMETRIC else float(stats.norm.ppf(tau))


def gen_location_scale(config: LocationScaleConfig):
    """Draw one dataset.  Returns (sample, truth) where truth(tau) is the
    full coefficient vector the estimators target at quantile tau."""
    chol = _cholesky_or_raise(config.covariance())
    rng = np.random.default_rng(config.seed)
    latent = rng.standard_normal((config.n, _LATENT_DIM)) @ chol.T
    if config.design == _SYMMETRIC:
        u, d1, d2, z1, z2, x = (
            stats.norm.cdf(latent[:, k]) for k in range(_LATENT_DIM)
        )
    else:
        u, z1, z2, x = (latent[:, k] for k in (0, 3, 4, 5))
        d1, d2 = np.exp(2.0 * latent[:, 1]), np.exp(2.0 * latent[:, 2])
    g = config.gamma
    y = (
        g[0]
        + g[1] * x
        + g[2] * d1
        + g[3] * d2
        + (g[4] + g[5] * d1 + g[6] * d2) * u
    )
    ones = np.ones(config.n)
    if config.d_d == 1:
        sample = Sample(
            y=y, d=d1, x=np.column_stack([ones, x]), z=z1
        )
    else:
        sample = Sample(
            y=y,
            d=np.column_stack([d1, d2]),
            x=np.column_stack([ones, x]),
            z=np.column_stack([z1, z2]),
        )
    design, d_d = config.design, config.d_d

    def truth(tau: float) -> Theta:
        r = _rank_quantile(design, tau)
        theta_end = [g[2] + g[5] * r]
        if d_d == 2:
            theta_end.append(g[3] + g[6] * r)
        return Theta(
            theta1=np.array([g[0] + g[4] * r, g[1]]),
            theta_end=np.array(theta_end),
            tau=tau,
        )

    return sample, truth


@dataclass
class AppLikeConfig:
    """Application-flavoured design: binary instrument, selection into a
    binary treatment, dollar-scale outcome.

    The treatment effect is 5000 + 10000*U by default (rank-dependent);
    extra endogenous columns have constant effect extra_coef and loading
    extra_loading = (on their own instrument, on the common rank).  The
    covariates are synthetic stand-ins (lognormal income, uniform age).
    """

    n: int
    p_z: float = 0.37
    threshold: float = 0.6
    theta2_intercept: float = 5000.0
    theta2_slope: float = 10000.0
    extra_endogenous: int = 0
    extra_coef: float = 10000.0
    extra_loading: tuple[float, float] = (0.8, 0.2)
    residual_shape: float = 2.0
    residual_scale: float = 10000.0
    theta1: tuple[float, ...] = (-10000.0, 0.9, 250.0)
    seed: int | np.random.SeedSequence = 0

    def __post_init__(self):
        if not 0.0 < self.p_z < 1.0:
            raise ValueError(f"p_z must lie in (0, 1), got {self.p_z}")
        if self.n < 100:
            raise ValueError("application-like design needs n >= 100")
        if self.extra_endogenous < 0:
            raise ValueError("extra_endogenous must be non-negative")
        if self.residual_shape <= 0.0:
            raise ValueError("residual_shape must be positive")


def gen_application_like(config: AppLikeConfig):
    """Draw one dataset.  Returns (sample, truth) like gen_location_scale."""
    rng = np.random.default_rng(config.seed)
    n = config.n
    u = rng.uniform(size=n)
    v = rng.uniform(size=n)
    z = (rng.uniform(size=n) < config.p_z).astype(float)
    d = z * (config.threshold * v < u)

    income = rng.lognormal(mean=10.5, sigma=0.7, size=n)
    age = rng.integers(25, 65, size=n).astype(float)
    x = np.column_stack([np.ones(n), income, age])
    theta1 = np.asarray(config.theta1, dtype=float)
    if theta1.shape[0] != x.shape[1]:
        raise ValueError("theta1 must have 3 entries (intercept, income, age)")

    median = stats.gamma.ppf(0.5, a=config.residual_shape)
    resid = config.residual_scale * (
        stats.gamma.ppf(u, a=config.residual_shape) - median
    )
    y = (
        x @ theta1
        + d * (config.theta2_intercept + config.theta2_slope * u)
        + resid
    )

    d_cols, z_cols = [d], [z]
    for _ in range(config.extra_endogenous):
        zk = rng.standard_normal(n)
        dk = (
            config.extra_loading[0] * zk
            + config.extra_loading[1] * stats.norm.ppf(u)
        )
        y = y + config.extra_coef * dk
        d_cols.append(dk)
        z_cols.append(zk)

    sample = Sample(
        y=y,
        d=np.column_stack(d_cols),
        x=x,
        z=np.column_stack(z_cols),
    )
    cfg = config

    def truth(tau: float) -> Theta:
        theta_end = [cfg.theta2_intercept + cfg.theta2_slope * tau]
        theta_end.extend([cfg.extra_coef] * cfg.extra_endogenous)
        return Theta(
            theta1=theta1.copy(), theta_end=np.array(theta_end), tau=tau
        )

    return sample, truth


def _generate(dgp, seed):
    cfg = replace(dgp, seed=seed)
    if isinstance(cfg, LocationScaleConfig):
        return gen_location_scale(cfg)
    if isinstance(cfg, AppLikeConfig):
        return gen_application_like(cfg)
    raise TypeError(f"unsupported DGP config type {type(dgp).__name__}")


@dataclass
class ReportCell:
    """Aggregates for one (estimator, tau) pair.

    bias/rmse/coverage are per endogenous coefficient.  mean_seconds is
    wall-clock and not reproducible across machines or runs.
    """

    estimator: str
    tau: float
    bias: np.ndarray
    rmse: np.ndarray
    coverage: dict[float, np.ndarray]
    mean_seconds: float
    reps: int
    failures: int


@dataclass
class SimulationReport:
    cells: list[ReportCell]
    reps_requested: int
    seed: int
    dgp: dict

    def cell(self, estimator: str, tau: float) -> ReportCell:
        for c in self.cells:
            if c.estimator == estimator and np.isclose(c.tau, tau):
                return c
        raise KeyError(f"no cell for ({estimator!r}, {tau})")

    def to_json_dict(self) -> dict:
        return {
            "reps_requested": self.reps_requested,
            "seed": self.seed,
            "dgp": self.dgp,
            "timing_note": "mean_seconds is wall-clock, not deterministic",
            "cells": [
                {
                    "estimator": c.estimator,
                    "tau": c.tau,
                    "bias": list(c.bias),
                    "rmse": list(c.rmse),
                    "coverage": {
                        repr(level): list(v)
                        for level, v in sorted(c.coverage.items())
                    },
                    "mean_seconds": c.mean_seconds,
                    "reps": c.reps,
                    "failures": c.failures,
                }
                for c in self.cells
            ],
        }

    def csv_rows(self) -> tuple[list[str], list[list]]:
        """Flat table: one row per cell, coefficient-indexed columns."""
        width = max(len(c.bias) for c in self.cells)
        levels = sorted({lv for c in self.cells for lv in c.coverage})
        header = ["estimator", "tau"]
        header += [f"bias_{k + 1}" for k in range(width)]
        header += [f"rmse_{k + 1}" for k in range(width)]
        for lv in levels:
            header += [f"coverage{lv:g}_{k + 1}" for k in range(width)]
        header += ["mean_seconds", "reps", "failures"]
        rows = []
        for c in self.cells:
            pad = width - len(c.bias)
            row = [c.estimator, c.tau]
            row += list(c.bias) + [""] * pad
            row += list(c.rmse) + [""] * pad
            for lv in levels:
                if lv in c.coverage:
                    row += list(c.coverage[lv]) + [""] * pad
                else:
                    row += [""] * width
            row += [c.mean_seconds, c.reps, c.failures]
            rows.append(row)
        return header, rows


@dataclass
class McConfig:
    """Monte Carlo run: which DGP, which estimators, which quantiles."""

    dgp: LocationScaleConfig | AppLikeConfig
    estimators: tuple[str, ...]
    taus: tuple[float, ...]
    reps: int
    bootstrap_b: int | None = None
    levels: tuple[float, ...] = (0.9, 0.95)
    seed: int = 0
    workers: int | None = None
    solver_opts: SolverOptions | None = field(default=None, repr=False)
    bootstrap_opts: SolverOptions | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not self.estimators:
            raise ValueError("need at least one estimator")
        if not all(0.0 < t < 1.0 for t in self.taus):
            raise ValueError("taus must lie in (0, 1)")


def _run_one_rep(config: McConfig, stream) -> dict:
    """All estimator results on one fresh dataset; deterministic given the
    stream."""
    data_stream, boot_stream = stream.spawn(2)
    sample, truth = _generate(config.dgp, data_stream)
    out: dict = {}
    for tau in config.taus:
        target = truth(tau).theta_end
        boot_streams = (
            boot_stream.spawn(len(config.estimators))
            if config.bootstrap_b
            else [None] * len(config.estimators)
        )
        for est, bs in zip(config.estimators, boot_streams):
            t0 = time.perf_counter()
            try:
                res = fit(sample, tau, algorithm=est, opts=config.solver_opts)
                ok = res.converged
            except Exception:
                res, ok = None, False
            elapsed = time.perf_counter() - t0
            entry = {"seconds": elapsed, "ok": ok}
            if ok:
                entry["error"] = res.theta.theta_end - target
                if config.bootstrap_b:
                    covers = {}
                    try:
                        boot = bootstrap_estimate(
                            sample,
                            tau,
                            algorithm=est,
                            b=config.bootstrap_b,
                            seed=bs,
                            opts=(
                                config.bootstrap_opts or config.solver_opts
                            ),
                        )
                        for level in config.levels:
                            ci = percentile_ci(boot, level)
                            end_block = ci[-target.shape[0] :]
                            covers[level] = (
                                (end_block[:, 0] <= target)
                                & (target <= end_block[:, 1])
                            ).astype(float)
                    except Exception:
                        covers = None
                    entry["covers"] = covers
            out[(est, tau)] = entry
    return out


def run_monte_carlo(config: McConfig) -> SimulationReport:
    """Replicate the DGP, run every estimator at every quantile, aggregate.

    Estimates are deterministic for a fixed seed regardless of workers;
    timings are wall-clock and excluded from that guarantee.  Failed
    replications are dropped per cell and reported in the failure count.
    """
    streams = np.random.SeedSequence(config.seed).spawn(config.reps)
    if config.workers is not None and config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(
                pool.map(lambda s: _run_one_rep(config, s), streams)
            )
    else:
        results = [_run_one_rep(config, s) for s in streams]

    cells = []
    for est in config.estimators:
        for tau in config.taus:
            entries = [r[(est, tau)] for r in results]
            errors = [e["error"] for e in entries if e["ok"]]
            seconds = [e["seconds"] for e in entries]
            failures = sum(1 for e in entries if not e["ok"])
            if errors:
                err = np.array(errors)
                bias = err.mean(axis=0)
                rmse = np.sqrt((err**2).mean(axis=0))
            else:
                bias = rmse = np.full(1, np.nan)
            coverage: dict[float, np.ndarray] = {}
            if config.bootstrap_b:
                for level in config.levels:
                    hits = [
                        e["covers"][level]
                        for e in entries
                        if e["ok"] and e.get("covers") is not None
                    ]
                    if hits:
                        coverage[level] = np.array(hits).mean(axis=0)
            cells.append(
                ReportCell(
                    estimator=est,
                    tau=tau,
                    bias=bias,
                    rmse=rmse,
                    coverage=coverage,
                    mean_seconds=float(np.mean(seconds)),
                    reps=len(errors),
                    failures=failures,
                )
            )
    dgp_desc = {"type": type(config.dgp).__name__}
    for key, value in vars(config.dgp).items():
        if key != "seed":
            dgp_desc[key] = (
                list(value) if isinstance(value, tuple) else value
            )
    return SimulationReport(
        cells=cells,
        reps_requested=config.reps,
        seed=config.seed,
        dgp=dgp_desc,
    )
