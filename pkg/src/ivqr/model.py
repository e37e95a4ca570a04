"""Data model for IV quantile regression.

Holds the observed sample (y, d, x, z), the partitioned parameter vector,
the positivity-restoring reparametrization of endogenous columns and
instruments, least-squares instrument projection for overidentified models,
the sample moment function, and two-stage least squares starting values.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from .errors import NoInterceptError, NonFiniteError, RankDeficientError


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return a


@dataclass(frozen=True)
class Sample:
    """Observed data: outcome y, endogenous d, exogenous x, instruments z.

    y: (N,), d: (N, d_D), x: (N, d_X), z: (N, d_Z) with d_Z >= d_D.
    """

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float).ravel())
        for name in ("d", "x", "z"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name)))
        n = self.y.shape[0]
        for name in ("d", "x", "z"):
            m = getattr(self, name)
            if m.shape[0] != n:
                raise ValueError(f"{name} has {m.shape[0]} rows, y has {n}")
        if not all(
            np.isfinite(getattr(self, name)).all()
            for name in ("y", "d", "x", "z")
        ):
            raise NonFiniteError("sample contains NaN or Inf")
        if self.d_z < self.d_d:
            raise ValueError(
                f"need at least as many instruments as endogenous variables "
                f"(d_Z={self.d_z} < d_D={self.d_d})"
            )
        if n <= self.d_x + self.d_d:
            raise ValueError("need N > d_X + d_D observations")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d_d(self) -> int:
        return self.d.shape[1]

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    @property
    def d_z(self) -> int:
        return self.z.shape[1]

    def intercept_column(self) -> int | None:
        """Index of the first all-ones column of x, or None."""
        for k in range(self.d_x):
            if np.all(self.x[:, k] == 1.0):
                return k
        return None


@dataclass(frozen=True)
class Theta:
    """Partitioned parameter: theta1 on x, one scalar per endogenous column.

    The stacked order is (theta1, theta_end).
    """

    theta1: np.ndarray
    theta_end: np.ndarray
    tau: float

    def __post_init__(self):
        object.__setattr__(
            self, "theta1", np.asarray(self.theta1, dtype=float).ravel()
        )
        object.__setattr__(
            self, "theta_end", np.asarray(self.theta_end, dtype=float).ravel()
        )
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.theta1, self.theta_end])

    @property
    def dim(self) -> int:
        return self.theta1.shape[0] + self.theta_end.shape[0]


@dataclass(frozen=True)
class ReparamRecord:
    """How a sample was transformed to make every weight z/d positive.

    shift[l] was added to endogenous column l; z_logistic[l] says whether
    instrument column l was passed through the logistic function.
    intercept_index locates the all-ones column of x (None if absent).
    """

    shift: np.ndarray
    z_logistic: tuple[bool, ...]
    intercept_index: int | None

    @property
    def is_identity(self) -> bool:
        return not np.any(self.shift) and not any(self.z_logistic)


def reparametrize(sample: Sample) -> tuple[Sample, ReparamRecord]:
    """Shift non-positive endogenous columns and positively transform
    non-positive instrument columns so every ratio z/d is strictly positive.

    Column l of d gains c_l = |min d_l| + 1 when it has entries <= 0;
    instrument columns with entries <= 0 are replaced by logistic(z).
    """
    if sample.d_z != sample.d_d:
        raise ValueError(
            "reparametrize expects a just-identified sample; "
            "apply project_instruments first"
        )
    d = sample.d.copy()
    z = sample.z.copy()
    shift = np.zeros(sample.d_d)
    z_logistic = []
    for l in range(sample.d_d):
        mn = d[:, l].min()
        if mn <= 0.0:
            shift[l] = abs(mn) + 1.0
            d[:, l] = d[:, l] + shift[l]
        flip = z[:, l].min() <= 0.0
        z_logistic.append(bool(flip))
        if flip:
            z[:, l] = 1.0 / (1.0 + np.exp(-z[:, l]))
    record = ReparamRecord(
        shift=shift,
        z_logistic=tuple(z_logistic),
        intercept_index=sample.intercept_column(),
    )
    out = sample if record.is_identity else replace(sample, d=d, z=z)
    return out, record


def unreparametrize(theta: Theta, record: ReparamRecord) -> Theta:
    """Map a parameter estimated on a reparametrized sample back to the
    original coordinates: the intercept absorbs sum_l c_l * theta_end[l]."""
    correction = float(record.shift @ theta.theta_end)
    if correction == 0.0:
        return theta
    if record.intercept_index is None:
        raise NoInterceptError(
            "cannot invert an endogenous-column shift without an intercept"
        )
    theta1 = theta.theta1.copy()
    theta1[record.intercept_index] += correction
    return Theta(theta1=theta1, theta_end=theta.theta_end, tau=theta.tau)


def project_instruments(sample: Sample, strict: bool = False) -> Sample:
    """Replace z by least-squares fitted values of each d column on (z, x).

    Reduces an overidentified model (d_Z > d_D) to exactly one instrument per
    endogenous column.  A just-identified sample passes through unchanged
    unless strict=True, in which case it is an error.
    """
    if sample.d_z == sample.d_d:
        if strict:
            raise ValueError("sample is already just-identified")
        return sample
    design = np.column_stack([sample.z, sample.x])
    coef, _, rank, _ = np.linalg.lstsq(design, sample.d, rcond=None)
    if rank < design.shape[1]:
        raise RankDeficientError("projection design (z, x) is rank deficient")
    return replace(sample, z=design @ coef)


def prepare(sample: Sample) -> tuple[Sample, ReparamRecord]:
    """Full preprocessing pipeline: project instruments down to one per
    endogenous column, then shift/transform so all d and z entries are
    positive.  Returns the working sample and the record needed to map
    estimates back to the original scale."""
    return reparametrize(project_instruments(sample))


def sample_moments(sample: Sample, theta: Theta) -> np.ndarray:
    """(1/N) * sum_i (1{y_i <= x_i'theta1 + d_i'theta_end} - tau) * (x_i, z_i)."""
    fit = sample.x @ theta.theta1 + sample.d @ theta.theta_end
    g = (sample.y <= fit).astype(float) - theta.tau
    return np.concatenate([g @ sample.x, g @ sample.z]) / sample.n


def moment_bounds(sample: Sample) -> np.ndarray:
    """Vertex certificate bounds matching sample_moments' layout.

    With all rows distinct the bound is d_X * max_i |x_ik| / N for the x
    block and max_i |z_il| / N per instrument: a vertex QR solution pins
    dim(theta_j) rows exactly at the quantile, and each pinned row moves
    the moment by at most its instrument magnitude over N.  Rows
    duplicated by with-replacement resampling are pinned together with
    their full multiplicity, so under ties each bound is raised to the
    largest total magnitude that dim(theta_j) distinct rows can carry; on
    duplicate-free data this reproduces the distinct-row bound exactly.
    """
    rows = np.column_stack([sample.y, sample.x, sample.d, sample.z])
    uniq, counts = np.unique(rows, axis=0, return_counts=True)
    if uniq.shape[0] == rows.shape[0]:
        bx = sample.d_x * np.max(np.abs(sample.x), axis=0) / sample.n
        bz = np.max(np.abs(sample.z), axis=0) / sample.n
        return np.concatenate([bx, bz])
    ux = uniq[:, 1 : 1 + sample.d_x]
    uz = uniq[:, 1 + sample.d_x + sample.d_d :]
    out = np.empty(sample.d_x + sample.d_z)
    for j in range(sample.d_x):
        weighted = counts * np.abs(ux[:, j])
        top = np.sort(weighted)[-sample.d_x :].sum()
        out[j] = max(sample.d_x * np.max(np.abs(sample.x[:, j])), top)
    for j in range(sample.d_z):
        weighted = counts * np.abs(uz[:, j])
        out[sample.d_x + j] = max(
            np.max(np.abs(sample.z[:, j])), weighted.max()
        )
    return out / sample.n


def _solve_ls(design: np.ndarray, response: np.ndarray) -> np.ndarray:
    coef, _, rank, _ = np.linalg.lstsq(design, response, rcond=None)
    if rank < design.shape[1]:
        raise RankDeficientError("least-squares design is rank deficient")
    return coef


def tsls(sample: Sample, tau: float = 0.5) -> Theta:
    """Two-stage least squares arranged into the Theta layout."""
    theta, _ = tsls_with_se(sample, tau)
    return theta


def tsls_with_se(sample: Sample, tau: float = 0.5) -> tuple[Theta, np.ndarray]:
    """TSLS point estimate plus homoskedastic standard errors.

    Returns (theta, se) where se is stacked like theta.stacked().  Used for
    starting values, root brackets, and grid bounds.
    """
    w = np.column_stack([sample.x, sample.d])
    a = np.column_stack([sample.x, sample.z])
    first = _solve_ls(a, w)
    w_hat = a @ first
    gram = w_hat.T @ w_hat
    try:
        fac = linalg.cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError("projected design is rank deficient") from exc
    coef = linalg.cho_solve(fac, w_hat.T @ sample.y)
    resid = sample.y - w @ coef
    dof = max(sample.n - w.shape[1], 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * linalg.cho_solve(fac, np.eye(w.shape[1]))
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    theta = Theta(
        theta1=coef[: sample.d_x], theta_end=coef[sample.d_x :], tau=tau
    )
    return theta, se
