"""Weighted quantile-regression (check-loss) solver with a vertex optimality certificate.

Minimizes (1/N) * sum_i w_i * rho_tau(y_i - x_i'beta) where rho_tau is the
check loss.  Scalar problems are solved exactly by scanning the breakpoints of
the piecewise-linear objective; multivariate problems run a Mehrotra
predictor-corrector interior-point method on the LP dual, followed by a polish
step that lands on an exact basic (vertex) solution and verifies LP optimality
of its basis.  Vertex solutions interpolate at most p observations, which is
what makes the subgradient bound p * max_i |w_i * x_ik| / N hold exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lapack

from .errors import NonFiniteError, NonPositiveWeightError, RankDeficientError

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITER = "max_iter"
STATUS_DEGENERATE = "degenerate"

_RANK_RTOL = 1e-10  # relative threshold on the singular-value scale
_DUAL_FEAS_TOL = 1e-9
_MAX_EXCHANGES = 60


@dataclass
class QRProblem:
    """One weighted check-loss minimization instance.

    design    : (N, p) matrix, full column rank
    response  : (N,) vector
    tau       : quantile level in (0, 1)
    weights   : (N,) strictly positive, defaults to ones
    """

    design: np.ndarray
    response: np.ndarray
    tau: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.design = np.atleast_2d(np.asarray(self.design, dtype=float))
        if self.design.shape[0] == 1 and self.design.shape[1] > 1:
            # a flat vector is a single column, not a single row
            self.design = self.design.T
        self.response = np.asarray(self.response, dtype=float).ravel()
        n, p = self.design.shape
        if self.response.shape[0] != n:
            raise ValueError(
                f"response length {self.response.shape[0]} != design rows {n}"
            )
        if n < p or p < 1:
            raise ValueError(f"need N >= p >= 1, got N={n}, p={p}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.weights is None:
            self.weights = np.ones(n)
        else:
            self.weights = np.asarray(self.weights, dtype=float).ravel()
            if self.weights.shape[0] != n:
                raise ValueError("weights length does not match design rows")

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]


@dataclass
class QRSolution:
    """Solution of a weighted QR problem.

    subgradient holds (1/N) * sum_i w_i * (1{r_i <= 0} - tau) * x_i at beta;
    subgradient_bound[k] = p * max_i |w_i * x_ik| / N.  When status is
    "optimal" every |subgradient[k]| <= subgradient_bound[k].  basis lists
    the row indices the vertex solution interpolates; it can be fed back to
    solve_weighted_qr as a warm start for a nearby problem.
    """

    beta: np.ndarray
    objective: float
    subgradient: np.ndarray
    subgradient_bound: np.ndarray
    iterations: int
    status: str
    basis: list[int] | None = None


@dataclass
class OptimalityCheck:
    subgradient: np.ndarray
    bound: np.ndarray
    passed: bool


def _validate(problem: QRProblem) -> None:
    if not (
        np.isfinite(problem.design).all()
        and np.isfinite(problem.response).all()
        and np.isfinite(problem.weights).all()
    ):
        raise NonFiniteError("QR inputs contain NaN or Inf")
    if np.any(problem.weights <= 0.0):
        raise NonPositiveWeightError("QR weights must be strictly positive")


def _check_rank(xw: np.ndarray) -> None:
    """Full-column-rank check via pivoted Cholesky of the Gram matrix."""
    gram = xw.T @ xw
    dmax = float(np.max(np.diag(gram)))
    if dmax <= 0.0:
        raise RankDeficientError("design has a zero column")
    # singular-value threshold 1e-10 squares on the Gram scale
    _, _, rank, _ = lapack.dpstrf(gram, tol=dmax * _RANK_RTOL**2, lower=1)
    if rank < xw.shape[1]:
        raise RankDeficientError(
            f"design has rank {rank} < {xw.shape[1]} columns"
        )


def _scan_line_min(x: np.ndarray, y: np.ndarray, tau: float):
    """Exactly minimize f(t) = sum_i rho_tau(y_i - x_i * t).

    Returns (t_star, index) where index is the position (into x/y) of the
    breakpoint the minimizer lands on.  Rows with x_i == 0 contribute a
    constant and are ignored.  Requires at least one nonzero x_i.
    """
    live = np.nonzero(x)[0]
    xs = x[live]
    bp = y[live] / xs
    absx = np.abs(xs)
    slope0 = -tau * np.sum(absx[xs > 0]) - (1.0 - tau) * np.sum(absx[xs < 0])
    order = np.argsort(bp, kind="stable")
    cum = slope0 + np.cumsum(absx[order])
    hit = np.nonzero(cum >= 0.0)[0]
    k = hit[0] if hit.size else order.size - 1
    pick = live[order[k]]
    return float(bp[order[k]]), int(pick)


def _interior_point(xw, yw, tau, tol, max_iter):
    """Mehrotra predictor-corrector on the bounded-variable QR dual.

    max yw'a  s.t.  xw'a = (1 - tau) * xw'1,  a in [0, 1]^N.
    Returns (beta, a, iterations, converged).
    """
    n, p = xw.shape
    c_eq = (1.0 - tau) * xw.sum(axis=0)
    a = np.full(n, 1.0 - tau)
    gram = xw.T @ xw
    try:
        beta = cho_solve(cho_factor(gram), xw.T @ yw)
    except np.linalg.LinAlgError:
        beta = np.linalg.lstsq(xw, yw, rcond=None)[0]
    r = yw - xw @ beta
    delta = 1e-3 * (1.0 + float(np.mean(np.abs(r))))
    w = np.maximum(r, 0.0) + delta
    u = np.maximum(-r, 0.0) + delta

    scale = 1.0 + float(np.sum(np.abs(yw)))
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        s = 1.0 - a
        gap = float(a @ u + s @ w)
        r1 = c_eq - xw.T @ a
        if gap / scale <= tol and np.max(np.abs(r1)) <= 1e-8 * (
            1.0 + np.max(np.abs(c_eq))
        ):
            converged = True
            break
        f3 = w - u - (yw - xw @ beta)
        q = u + a * w / s
        inv_q = 1.0 / q
        m = xw.T @ (xw * (a * inv_q)[:, None])
        try:
            fac = cho_factor(m)
        except np.linalg.LinAlgError:
            break
        # affine predictor
        rv = -a * u - (a / s) * (-s * w) - a * f3
        db = cho_solve(fac, xw.T @ (rv * inv_q) - r1)
        da = (rv - a * (xw @ db)) * inv_q
        dw = (-s * w + w * da) / s
        du = dw + xw @ db + f3
        ap = _step_len(a, da, s, -da)
        ad = _step_len(w, dw, u, du)
        gap_aff = float((a + ap * da) @ (u + ad * du) + (s - ap * da) @ (w + ad * dw))
        sigma = min(1.0, max(0.0, (gap_aff / gap) ** 3))
        mu = sigma * gap / (2.0 * n)
        # corrector
        r4 = mu - a * u - da * du
        r5 = mu - s * w + da * dw
        rv = r4 - (a / s) * r5 - a * f3
        db = cho_solve(fac, xw.T @ (rv * inv_q) - r1)
        da = (rv - a * (xw @ db)) * inv_q
        dw = (r5 + w * da) / s
        du = dw + xw @ db + f3
        ap = _step_len(a, da, s, -da)
        ad = _step_len(w, dw, u, du)
        a = np.clip(a + ap * da, 1e-14, 1.0 - 1e-14)
        beta = beta + ad * db
        w = np.maximum(w + ad * dw, 1e-14)
        u = np.maximum(u + ad * du, 1e-14)
    return beta, a, it, converged


def _step_len(v1, dv1, v2, dv2):
    """Largest step in (0, 1] keeping v1 + t*dv1 and v2 + t*dv2 positive."""
    t = 1.0
    for v, dv in ((v1, dv1), (v2, dv2)):
        neg = dv < 0
        if np.any(neg):
            t = min(t, float(np.min(v[neg] / -dv[neg])))
    return min(1.0, 0.9995 * t)


def _greedy_basis(xw: np.ndarray, order: np.ndarray) -> list[int]:
    """First p row indices along `order` whose design rows are independent."""
    p = xw.shape[1]
    basis: list[int] = []
    ortho: list[np.ndarray] = []  # orthonormalized selected rows
    for i in order:
        row = xw[i]
        perp = row.copy()
        for v in ortho:
            perp -= (v @ perp) * v
        nrm = np.linalg.norm(perp)
        if nrm > 1e-8 * (np.linalg.norm(row) + 1e-300):
            basis.append(int(i))
            ortho.append(perp / nrm)
            if len(basis) == p:
                return basis
    raise RankDeficientError("could not assemble a full-rank vertex basis")


def _verify_basis(xw, yw, tau, basis):
    """Exact-fit solve on `basis` plus LP dual-feasibility check of the basis.

    Returns (beta, residuals, dual_on_basis, feasible).
    """
    xb = xw[basis]
    yb = yw[basis]
    try:
        beta = np.linalg.solve(xb, yb)
    except np.linalg.LinAlgError:
        beta = np.linalg.lstsq(xb, yb, rcond=None)[0]
    r = yw - xw @ beta
    nb = np.ones(xw.shape[0], dtype=bool)
    nb[basis] = False
    pos = nb & (r > 0.0)
    rhs = (1.0 - tau) * xw.sum(axis=0) - xw[pos].sum(axis=0)
    try:
        a_b = np.linalg.solve(xb.T, rhs)
    except np.linalg.LinAlgError:
        a_b = np.linalg.lstsq(xb.T, rhs, rcond=None)[0]
    feasible = bool(
        np.all(a_b >= -_DUAL_FEAS_TOL) and np.all(a_b <= 1.0 + _DUAL_FEAS_TOL)
    )
    return beta, r, a_b, feasible


def _exchange_to_optimal(xw, yw, tau, basis, cap=_MAX_EXCHANGES):
    """Drive a vertex basis to LP optimality by simplex-style exchanges.

    Each exchange is an exact line search of the piecewise-linear objective
    along the edge that relaxes the most violated dual coordinate.
    Returns (beta, basis, feasible, exchanges).
    """
    basis = list(basis)
    beta, r, a_b, feasible = _verify_basis(xw, yw, tau, basis)
    exchanges = 0
    eye = np.eye(len(basis))
    while not feasible and exchanges < cap:
        viol = np.maximum(-a_b, a_b - 1.0)
        k = int(np.argmax(viol))
        try:
            h = np.linalg.solve(xw[basis], eye[:, k])
        except np.linalg.LinAlgError:
            break
        t_star, entering = _scan_line_min(xw @ h, r, tau)
        if t_star == 0.0 or entering == basis[k]:
            break  # degenerate stall: no strict improvement along this edge
        basis[k] = entering
        beta, r, a_b, feasible = _verify_basis(xw, yw, tau, basis)
        exchanges += 1
    return beta, basis, feasible, exchanges


def _polish_vertex(xw, yw, tau, a):
    """Project an interior-point iterate to a verified optimal vertex.

    Orders rows by dual interiority, exact-fits the leading independent p of
    them, and repairs a dual-infeasible basis with exchanges.
    Returns (beta, basis, feasible, exchanges).
    """
    score = np.minimum(a, 1.0 - a)
    order = np.argsort(-score, kind="stable")
    basis = _greedy_basis(xw, order)
    return _exchange_to_optimal(xw, yw, tau, basis)


def _subgradient(xw, rw, tau):
    """(1/N) * sum_i (1{r_i <= 0} - tau) * w_i x_i on the folded design."""
    n = xw.shape[0]
    return ((rw <= 0.0).astype(float) - tau) @ xw / n


def subgradient_bound(xw: np.ndarray) -> np.ndarray:
    """Vertex certificate bound p * max_i |w_i * x_ik| / N per column."""
    n, p = xw.shape
    return p * np.max(np.abs(xw), axis=0) / n


def _objective(rw: np.ndarray, tau: float) -> float:
    """(1/N) * sum_i w_i * rho_tau(r_i), computed from folded residuals."""
    return float(np.mean(rw * (tau - (rw < 0.0)))) if rw.size else 0.0


def solve_weighted_qr(
    problem: QRProblem,
    tol: float = 1e-9,
    max_iter: int = 100,
    basis_hint: list[int] | None = None,
) -> QRSolution:
    """Solve a weighted quantile regression to an exact vertex solution.

    tol bounds the interior-point duality gap; max_iter caps its iterations.
    basis_hint warm-starts the vertex search from a previous solution's basis
    (useful when re-solving after a small change to the response); exchanges
    repair it exactly, with a fallback to the interior point when the hint is
    far off.  Status is "optimal" when the returned vertex passes the LP
    optimality check, "degenerate" when ties stall the polish, and
    "max_iter" when the interior point ran out of iterations without a
    verifiable vertex.
    """
    _validate(problem)
    wts = problem.weights
    xw = problem.design * wts[:, None]
    yw = problem.response * wts
    _check_rank(xw)
    n, p = xw.shape

    if p == 1:
        t_star, idx = _scan_line_min(xw[:, 0], yw, problem.tau)
        beta = np.array([t_star])
        basis = [idx]
        status = STATUS_OPTIMAL
        iterations = 1
    else:
        beta = basis = None
        iterations = 0
        verified = False
        if basis_hint is not None and len(set(basis_hint)) == p:
            hint = [int(i) for i in basis_hint if 0 <= i < n]
            if len(hint) == p:
                beta, basis, verified, exchanges = _exchange_to_optimal(
                    xw, yw, problem.tau, hint, cap=12
                )
                iterations += exchanges
        if not verified:
            beta_ip, a, ip_iters, converged = _interior_point(
                xw, yw, problem.tau, tol, max_iter
            )
            iterations += ip_iters
            beta, basis, verified, exchanges = _polish_vertex(
                xw, yw, problem.tau, a
            )
            iterations += exchanges
            if verified:
                status = STATUS_OPTIMAL
            else:
                status = STATUS_DEGENERATE if converged else STATUS_MAX_ITER
                rw_ip = yw - xw @ beta_ip
                rw_v = yw - xw @ beta
                if _objective(rw_ip, problem.tau) < _objective(
                    rw_v, problem.tau
                ):
                    beta = beta_ip
                    basis = None
        else:
            status = STATUS_OPTIMAL

    rw = yw - xw @ beta
    sub = _subgradient(xw, rw, problem.tau)
    bound = subgradient_bound(xw)
    if status == STATUS_OPTIMAL and np.any(np.abs(sub) > bound):
        # Tied breakpoints can make the optimum interpolate more than p
        # observations, in which case the fixed 1{r <= 0} selection may
        # exceed the vertex bound even though beta is optimal.
        status = STATUS_DEGENERATE
    return QRSolution(
        beta=beta,
        objective=_objective(rw, problem.tau),
        subgradient=sub,
        subgradient_bound=bound,
        iterations=iterations,
        status=status,
        basis=basis,
    )


def check_optimality(problem: QRProblem, beta: np.ndarray) -> OptimalityCheck:
    """Evaluate the subgradient at beta against the vertex certificate bound."""
    _validate(problem)
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != problem.p:
        raise ValueError(
            f"beta has length {beta.shape[0]}, design has {problem.p} columns"
        )
    if not np.isfinite(beta).all():
        raise NonFiniteError("beta contains NaN or Inf")
    xw = problem.design * problem.weights[:, None]
    rw = problem.response * problem.weights - xw @ beta
    sub = _subgradient(xw, rw, problem.tau)
    bound = subgradient_bound(xw)
    return OptimalityCheck(
        subgradient=sub, bound=bound, passed=bool(np.all(np.abs(sub) <= bound))
    )
