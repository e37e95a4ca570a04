"""Data-generating processes and the Monte Carlo harness."""

from __future__ import annotations

import numpy as np
import pytest

from ivqr.errors import CovarianceNotPDError
from ivqr.fixpoint import SolverOptions
from ivqr.simulate import (
    AppLikeConfig,
    LocationScaleConfig,
    McConfig,
    gen_application_like,
    gen_location_scale,
    run_monte_carlo,
)

FAST = SolverOptions(canonicalize=False)


def test_location_scale_config_validation():
    with pytest.raises(ValueError):
        LocationScaleConfig(n=500, d_d=3)
    with pytest.raises(ValueError):
        LocationScaleConfig(n=500, design="lopsided")
    with pytest.raises(ValueError):
        LocationScaleConfig(n=500, gamma=(1.0,) * 5)
    with pytest.raises(ValueError):
        # d_d = 1 forbids a second endogenous coefficient in the outcome
        LocationScaleConfig(n=500, d_d=1, gamma=(1, 1, 1, 1, 1, 1, 1))
    with pytest.raises(CovarianceNotPDError):
        gen_location_scale(LocationScaleConfig(n=100, cov_ud1=1.5))


def test_location_scale_shapes_and_truth():
    sample, truth = gen_location_scale(
        LocationScaleConfig(n=300, d_d=2, design="symmetric", seed=1)
    )
    assert sample.d.shape == (300, 2)
    assert sample.z.shape == (300, 2)
    assert sample.x.shape == (300, 2)
    assert np.all(sample.x[:, 0] == 1.0)
    # symmetric design: rank variable is uniform, r(tau) = tau
    th = truth(0.5)
    np.testing.assert_allclose(th.theta1, [1.5, 1.0])
    np.testing.assert_allclose(th.theta_end, [1.5, 1.5])
    # asymmetric design: r(tau) = standard normal quantile, zero at the median
    _, truth_a = gen_location_scale(
        LocationScaleConfig(n=300, d_d=1, design="asymmetric", seed=1)
    )
    np.testing.assert_allclose(truth_a(0.5).stacked(), [1.0, 1.0, 1.0])
    assert truth_a(0.75).theta_end[0] > 1.0


def test_location_scale_determinism():
    cfg = LocationScaleConfig(n=200, seed=42)
    a, _ = gen_location_scale(cfg)
    b, _ = gen_location_scale(cfg)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.d, b.d)


def test_app_like_shapes_and_truth():
    sample, truth = gen_application_like(AppLikeConfig(n=500, seed=3))
    assert set(np.unique(sample.z)) <= {0.0, 1.0}
    assert set(np.unique(sample.d)) <= {0.0, 1.0}
    assert sample.x.shape == (500, 3)
    th = truth(0.5)
    assert th.theta_end[0] == 5000.0 + 10000.0 * 0.5
    with_extra, truth_extra = gen_application_like(
        AppLikeConfig(n=500, extra_endogenous=1, seed=3)
    )
    assert with_extra.d.shape == (500, 2)
    assert truth_extra(0.3).theta_end.shape == (2,)


def test_mc_config_validation():
    dgp = LocationScaleConfig(n=100)
    with pytest.raises(ValueError):
        McConfig(dgp=dgp, estimators=(), taus=(0.5,), reps=2)
    with pytest.raises(ValueError):
        McConfig(dgp=dgp, estimators=("brent",), taus=(1.5,), reps=2)
    with pytest.raises(ValueError):
        McConfig(dgp=dgp, estimators=("brent",), taus=(0.5,), reps=0)


def test_monte_carlo_report_shape_and_determinism():
    mc = McConfig(
        dgp=LocationScaleConfig(n=250, d_d=1, design="symmetric"),
        estimators=("brent",),
        taus=(0.25, 0.5),
        reps=3,
        seed=7,
        solver_opts=FAST,
    )
    rep_a = run_monte_carlo(mc)
    rep_b = run_monte_carlo(mc)
    assert rep_a.reps_requested == 3
    assert len(rep_a.cells) == 2
    for cell_a, cell_b in zip(rep_a.cells, rep_b.cells):
        np.testing.assert_array_equal(cell_a.bias, cell_b.bias)
        np.testing.assert_array_equal(cell_a.rmse, cell_b.rmse)
    # rmse^2 >= bias^2 cell by cell
    for c in rep_a.cells:
        assert np.all(c.rmse**2 >= c.bias**2 - 1e-15)


def test_monte_carlo_worker_invariance():
    mc = McConfig(
        dgp=LocationScaleConfig(n=250, d_d=1, design="symmetric"),
        estimators=("brent",),
        taus=(0.5,),
        reps=4,
        seed=11,
        solver_opts=FAST,
    )
    serial = run_monte_carlo(mc)
    pooled = run_monte_carlo(
        McConfig(**{**mc.__dict__, "workers": 2})
    )
    np.testing.assert_array_equal(
        serial.cell("brent", 0.5).bias, pooled.cell("brent", 0.5).bias
    )


def test_monte_carlo_with_bootstrap_coverage():
    mc = McConfig(
        dgp=LocationScaleConfig(n=250, d_d=1, design="symmetric"),
        estimators=("brent",),
        taus=(0.5,),
        reps=2,
        bootstrap_b=25,
        levels=(0.9,),
        seed=13,
        solver_opts=FAST,
        bootstrap_opts=FAST,
    )
    rep = run_monte_carlo(mc)
    cell = rep.cell("brent", 0.5)
    assert set(cell.coverage) == {0.9}
    cov = np.asarray(cell.coverage[0.9])
    assert cov.shape == (1,)
    assert 0.0 <= cov[0] <= 1.0


def test_report_serialization_schema():
    mc = McConfig(
        dgp=LocationScaleConfig(n=250, d_d=1, design="symmetric"),
        estimators=("brent",),
        taus=(0.5,),
        reps=2,
        bootstrap_b=25,
        levels=(0.9,),
        seed=3,
        solver_opts=FAST,
        bootstrap_opts=FAST,
    )
    rep = run_monte_carlo(mc)
    payload = rep.to_json_dict()
    assert {"reps_requested", "seed", "dgp", "cells", "timing_note"} <= set(payload)
    cell = payload["cells"][0]
    assert {"estimator", "tau", "bias", "rmse", "coverage"} <= set(cell)
    header, rows = rep.csv_rows()
    assert header[:2] == ["estimator", "tau"]
    assert any(col.startswith("coverage") for col in header)
    assert len(rows) == len(payload["cells"])
    assert all(len(r) == len(header) for r in rows)
