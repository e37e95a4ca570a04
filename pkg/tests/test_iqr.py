"""Inverse quantile-regression grid baseline."""

from __future__ import annotations

import warnings

import numpy as np
import pytest

from ivqr.errors import GridTooCoarseWarning
from ivqr.iqr import IqrGrid, solve_iqr
from ivqr.model import prepare
from ivqr.qr import QRProblem, solve_weighted_qr


def _objective_at(working, tau, theta_end, weight=None):
    design = np.column_stack([working.x, working.z])
    sol = solve_weighted_qr(
        QRProblem(design, working.y - working.d @ np.atleast_1d(theta_end), tau)
    )
    gamma = sol.beta[working.d_x :]
    if weight is None:
        return float(np.abs(gamma[0])) if gamma.size == 1 else float(gamma @ gamma)
    return float(gamma @ weight @ gamma)


def test_grid_validation():
    with pytest.raises(ValueError):
        IqrGrid(lower=[0.0], upper=[0.0], counts=(5,))
    with pytest.raises(ValueError):
        IqrGrid(lower=[0.0], upper=[1.0], counts=(1,))
    with pytest.raises(ValueError):
        IqrGrid(lower=[0.0, 0.0], upper=[1.0, 1.0], counts=(5,))
    grid = IqrGrid(lower=[0.0], upper=[1.0], counts=(11,))
    np.testing.assert_allclose(grid.spacings(), [0.1])
    assert grid.axes()[0].shape == (11,)


def test_around_tsls_counts(small_symmetric_sample, small_two_endo_sample):
    s1, _ = small_symmetric_sample
    s2, _ = small_two_endo_sample
    w1, _ = prepare(s1)
    w2, _ = prepare(s2)
    assert IqrGrid.around_tsls(w1, 0.5).counts == (500,)
    assert IqrGrid.around_tsls(w2, 0.5).counts == (40, 40)
    assert IqrGrid.around_tsls(w2, 0.5, points=7).counts == (7, 7)
    assert IqrGrid.around_tsls(w2, 0.5, points=(9, 11)).counts == (9, 11)


def test_selected_point_is_exhaustive_argmin(small_symmetric_sample):
    sample, _ = small_symmetric_sample
    working, _ = prepare(sample)
    grid = IqrGrid(lower=[1.0], upper=[2.0], counts=(21,))
    result = solve_iqr(working, 0.5, grid=grid)
    objs = np.array(
        [_objective_at(working, 0.5, t) for t in grid.axes()[0]]
    )
    assert result.residual <= objs.min() + 1e-12
    assert result.theta.theta_end[0] == grid.axes()[0][int(np.argmin(objs))]


def test_refining_grid_never_increases_objective(small_symmetric_sample):
    sample, _ = small_symmetric_sample
    working, _ = prepare(sample)
    coarse = solve_iqr(
        working, 0.5, grid=IqrGrid(lower=[1.0], upper=[2.0], counts=(11,))
    )
    fine = solve_iqr(
        working, 0.5, grid=IqrGrid(lower=[1.0], upper=[2.0], counts=(21,))
    )
    assert fine.residual <= coarse.residual + 1e-15


def test_boundary_winner_warns(small_symmetric_sample):
    sample, _ = small_symmetric_sample
    working, _ = prepare(sample)
    # a grid placed away from the minimum pins the winner to its edge
    off = IqrGrid(lower=[5.0], upper=[6.0], counts=(5,))
    with pytest.warns(GridTooCoarseWarning):
        solve_iqr(working, 0.5, grid=off)


def test_two_endogenous_grid(small_two_endo_sample):
    sample, _ = small_two_endo_sample
    working, _ = prepare(sample)
    grid = IqrGrid(lower=[0.8, 0.8], upper=[2.2, 2.2], counts=(7, 7))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GridTooCoarseWarning)
        result = solve_iqr(working, 0.5, grid=grid)
    assert result.theta.theta_end.shape == (2,)
    assert result.iterations == 49
    # objective equals the recomputed gamma norm at the winner
    got = _objective_at(working, 0.5, result.theta.theta_end)
    assert abs(got - result.residual) < 1e-12


def test_identity_weight_matches_default(small_two_endo_sample):
    sample, _ = small_two_endo_sample
    working, _ = prepare(sample)
    grid = IqrGrid(lower=[0.9, 0.9], upper=[2.1, 2.1], counts=(5, 5))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GridTooCoarseWarning)
        base = solve_iqr(working, 0.5, grid=grid)
        weighted = solve_iqr(working, 0.5, grid=grid, weight=np.eye(2))
    np.testing.assert_array_equal(
        base.theta.theta_end, weighted.theta.theta_end
    )


def test_rejects_overidentified_sample():
    rng = np.random.default_rng(12)
    n = 60
    z = rng.standard_normal((n, 2))
    d = z @ np.array([0.8, 0.3]) + 0.3 * rng.standard_normal(n)
    x = np.ones((n, 1))
    y = d + rng.standard_normal(n)
    from ivqr.model import Sample

    sample = Sample(y=y, d=d, x=x, z=z)
    with pytest.raises(ValueError):
        solve_iqr(sample, 0.5)
    working, _ = prepare(sample)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GridTooCoarseWarning)
        result = solve_iqr(working, 0.5)
    assert result.algorithm == "iqr"
