"""Empirical (nonparametric) bootstrap for any of the estimators.

Rows are resampled with replacement, the estimator is re-run on each
bootstrap sample, and confidence intervals come from the percentile-of-roots
rule.  Each replication draws from its own counter-indexed RNG stream, so
results are reproducible for a fixed seed no matter how the replications are
scheduled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDrawsError, TooManyFailuresError
from .fixpoint import SolverOptions, fit
from .model import Sample, Theta

_MIN_DRAWS = 20
_MAX_FAILURE_SHARE = 0.1


@dataclass
class BootstrapResult:
    """Point estimate plus the bootstrap distribution of the estimator.

    draws has one row per successful replication (stacked theta1, theta_end
    in original coordinates); failed replications are dropped and counted.
    """

    point: Theta
    draws: np.ndarray
    failures: int
    b: int
    seed: int | np.random.SeedSequence
    algorithm: str
    tau: float
    statuses: list[str] = field(repr=False, default_factory=list)


def _resample(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, n, size=n)


def bootstrap_estimate(
    sample: Sample,
    tau: float,
    algorithm: str | None = None,
    b: int = 200,
    seed: int = 0,
    opts: SolverOptions | None = None,
    index_sampler=None,
    workers: int | None = None,
) -> BootstrapResult:
    """Three-step empirical bootstrap of the chosen estimator.

    1. Estimate on the original sample (must converge).
    2. For each replication, resample N rows with replacement using a
       per-replication RNG stream spawned from seed, re-estimate warm-started
       at the original point, and record the stacked coefficients.
    3. Return the draws matrix; summarize with percentile_ci.

    index_sampler (testing hook) replaces the row sampler; it receives
    (rng, n) and must return n row indices.  Raises TooManyFailuresError when
    more than 10% of replications fail to converge.
    """
    if b < 1:
        raise ValueError(f"b must be at least 1, got {b}")
    original = fit(sample, tau, algorithm=algorithm, opts=opts)
    if not original.converged:
        raise ValueError(
            f"estimator did not converge on the original sample "
            f"(status {original.status}); nothing to bootstrap"
        )
    point = original.theta
    sampler = index_sampler if index_sampler is not None else _resample
    root = (
        seed
        if isinstance(seed, np.random.SeedSequence)
        else np.random.SeedSequence(seed)
    )
    streams = root.spawn(b)
    n = sample.n

    def one(stream) -> tuple[np.ndarray | None, str]:
        rng = np.random.default_rng(stream)
        idx = np.asarray(sampler(rng, n), dtype=int)
        boot = Sample(
            x=sample.x[idx], d=sample.d[idx], z=sample.z[idx], y=sample.y[idx]
        )
        res = fit(boot, tau, algorithm=algorithm, opts=opts, start=point)
        if res.converged:
            return res.theta.stacked(), res.status
        return None, res.status

    if workers is not None and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, streams))
    else:
        outcomes = [one(s) for s in streams]

    rows = [row for row, _ in outcomes if row is not None]
    statuses = [status for _, status in outcomes]
    failures = b - len(rows)
    if failures > _MAX_FAILURE_SHARE * b:
        raise TooManyFailuresError(
            f"{failures} of {b} bootstrap replications failed to converge"
        )
    draws = (
        np.array(rows) if rows else np.empty((0, point.stacked().shape[0]))
    )
    return BootstrapResult(
        point=point,
        draws=draws,
        failures=failures,
        b=b,
        seed=seed,
        algorithm=original.algorithm,
        tau=tau,
        statuses=statuses,
    )


def percentile_ci(result: BootstrapResult, level: float) -> np.ndarray:
    """Root-based percentile interval per coordinate.

    With roots r_b = theta*_b - theta_hat, the level-q interval is
    [theta_hat - quantile(r, 1 - a/2), theta_hat - quantile(r, a/2)] for
    a = 1 - level.  Returns an array of shape (dim, 2) with ordered
    endpoints.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if result.draws.shape[0] < _MIN_DRAWS:
        raise InsufficientDrawsError(
            f"need at least {_MIN_DRAWS} successful draws for a percentile "
            f"interval, have {result.draws.shape[0]}"
        )
    alpha = 1.0 - level
    center = result.point.stacked()
    roots = result.draws - center
    hi = np.quantile(roots, 1.0 - alpha / 2.0, axis=0)
    lo = np.quantile(roots, alpha / 2.0, axis=0)
    return np.column_stack([center - hi, center - lo])
