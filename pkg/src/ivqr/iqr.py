"""Grid-search baseline: inverse quantile regression (IQR).

For every candidate value of the endogenous coefficients, regress the
partialed-out response on the exogenous covariates and the instruments by
quantile regression; the estimate is the candidate that drives the
instrument coefficients closest to zero (absolute value for one endogenous
regressor, a quadratic form for several).  Exhaustive and robust, but its
cost grows exponentially in the number of endogenous regressors — which is
exactly what the fixed-point solvers avoid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import qr
from .errors import GridTooCoarseWarning
from .fixpoint import STATUS_CONVERGED, EstimateResult
from .model import Sample, Theta, sample_moments, tsls_with_se

_DEFAULT_POINTS_1D = 500
_DEFAULT_POINTS_ND = 40
_DEFAULT_K_SE = 5.0


@dataclass(frozen=True)
class IqrGrid:
    """Rectangular search grid: per-coefficient bounds and point counts."""

    lower: np.ndarray
    upper: np.ndarray
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "lower", np.asarray(self.lower, dtype=float).ravel()
        )
        object.__setattr__(
            self, "upper", np.asarray(self.upper, dtype=float).ravel()
        )
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if not (
            self.lower.shape == self.upper.shape
            and len(self.counts) == self.lower.shape[0]
        ):
            raise ValueError("lower, upper, counts must have equal length")
        if not np.all(self.lower < self.upper):
            raise ValueError("grid requires lower < upper in every dimension")
        if any(c < 2 for c in self.counts):
            raise ValueError("grid requires at least 2 points per dimension")

    @property
    def dim(self) -> int:
        return len(self.counts)

    def axes(self) -> list[np.ndarray]:
        return [
            np.linspace(self.lower[l], self.upper[l], self.counts[l])
            for l in range(self.dim)
        ]

    def spacings(self) -> np.ndarray:
        return (self.upper - self.lower) / (np.array(self.counts) - 1)

    @classmethod
    def around_tsls(
        cls,
        sample: Sample,
        tau: float,
        points: int | tuple[int, ...] | None = None,
        k_se: float = _DEFAULT_K_SE,
    ) -> "IqrGrid":
        """TSLS estimate +- k_se standard errors per endogenous coefficient,
        500 points for one endogenous regressor, 40 per dimension otherwise.
        """
        theta, se = tsls_with_se(sample, tau)
        center = theta.theta_end
        half = k_se * se[sample.d_x :]
        if points is None:
            points = (
                _DEFAULT_POINTS_1D if sample.d_d == 1 else _DEFAULT_POINTS_ND
            )
        counts = (
            (points,) * sample.d_d if isinstance(points, int) else tuple(points)
        )
        return cls(lower=center - half, upper=center + half, counts=counts)


def _objective(gamma: np.ndarray, weight: np.ndarray | None) -> float:
    if gamma.shape[0] == 1:
        return abs(float(gamma[0]))
    if weight is None:
        return float(gamma @ gamma)
    return float(gamma @ weight @ gamma)


def solve_iqr(
    sample: Sample,
    tau: float,
    grid: IqrGrid | None = None,
    weight: np.ndarray | None = None,
) -> EstimateResult:
    """Exhaustive grid search over the endogenous coefficients.

    At each grid point theta_end, run the quantile regression of
    y - d @ theta_end on the augmented design (x, z) and score the point by
    how close the instrument coefficients are to zero: |gamma| when d_D = 1,
    gamma' W gamma otherwise (W defaults to the identity; a kernel-based
    variance weighting is deliberately out of scope).  Full argmin with ties
    broken toward the lowest grid index; a boundary winner raises
    GridTooCoarseWarning.
    """
    if sample.d_z != sample.d_d:
        raise ValueError(
            "solve_iqr expects a just-identified sample; "
            "apply project_instruments first"
        )
    if grid is None:
        grid = IqrGrid.around_tsls(sample, tau)
    if grid.dim != sample.d_d:
        raise ValueError(
            f"grid dimension {grid.dim} != endogenous columns {sample.d_d}"
        )
    if weight is not None:
        weight = np.asarray(weight, dtype=float)
        if weight.shape != (sample.d_d, sample.d_d):
            raise ValueError("weight matrix shape must be (d_D, d_D)")

    design = np.column_stack([sample.x, sample.z])
    axes = grid.axes()
    shape = tuple(grid.counts)

    best_obj = np.inf
    best_point: np.ndarray | None = None
    best_beta: np.ndarray | None = None
    best_index: tuple[int, ...] | None = None
    trace: list[tuple[np.ndarray, float]] = []
    basis_hint: list[int] | None = None
    evaluated = 0

    # C-order scan: neighbouring points share most of their active rows, so
    # the previous vertex basis warm-starts the next solve.
    for index in np.ndindex(*shape):
        theta_end = np.array(
            [axes[l][index[l]] for l in range(grid.dim)], dtype=float
        )
        prob = qr.QRProblem(design, sample.y - sample.d @ theta_end, tau)
        sol = qr.solve_weighted_qr(prob, basis_hint=basis_hint)
        if sol.basis is not None:
            basis_hint = sol.basis
        gamma = sol.beta[sample.d_x :]
        obj = _objective(gamma, weight)
        trace.append((theta_end, obj))
        evaluated += 1
        if obj < best_obj:  # strict: ties keep the lowest index
            best_obj = obj
            best_point = theta_end
            best_beta = sol.beta
            best_index = index

    if any(
        i == 0 or i == c - 1 for i, c in zip(best_index, shape)
    ):
        warnings.warn(
            "grid winner lies on the boundary; widen or refine the grid",
            GridTooCoarseWarning,
            stacklevel=2,
        )

    theta = Theta(
        theta1=best_beta[: sample.d_x], theta_end=best_point, tau=tau
    )
    return EstimateResult(
        theta=theta,
        residual=float(best_obj),
        iterations=evaluated,
        trace=trace,
        status=STATUS_CONVERGED,
        algorithm="iqr",
        moments=sample_moments(sample, theta),
    )
