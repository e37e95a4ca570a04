"""Fixed-point solvers: cross-algorithm agreement, equivariances, statuses,
certificates, and diagnostics."""

from __future__ import annotations

import numpy as np
import pytest

from ivqr.fixpoint import (
    SolverOptions,
    algorithms,
    default_algorithm,
    diagnose_contraction,
    estimate,
    fit,
    fixed_point_curve,
    solve_brent,
)
from ivqr.model import (
    Sample,
    Theta,
    moment_bounds,
    prepare,
    sample_moments,
    tsls_with_se,
)


def test_algorithm_registry_and_defaults(small_symmetric_sample, small_two_endo_sample):
    names = algorithms()
    assert set(names) >= {
        "contraction",
        "contraction-k",
        "brent",
        "nested",
        "residual-min",
    }
    s1, _ = small_symmetric_sample
    s2, _ = small_two_endo_sample
    assert default_algorithm(s1) == "brent"
    assert default_algorithm(s2) == "nested"


def test_algorithm_validation(small_symmetric_sample, small_two_endo_sample):
    s1, _ = small_symmetric_sample
    s2, _ = small_two_endo_sample
    w1, _ = prepare(s1)
    w2, _ = prepare(s2)
    with pytest.raises(ValueError):
        estimate(w1, 0.5, "does-not-exist")
    with pytest.raises(ValueError):
        estimate(w2, 0.5, "brent")
    with pytest.raises(ValueError):
        estimate(w1, 0.5, "nested")


def test_cross_solver_agreement_one_endogenous(small_symmetric_sample):
    sample, _ = small_symmetric_sample
    results = {
        algo: fit(sample, 0.5, algo)
        for algo in ("brent", "contraction", "residual-min")
    }
    assert all(r.converged for r in results.values())
    ends = [r.theta.theta_end for r in results.values()]
    for other in ends[1:]:
        np.testing.assert_allclose(ends[0], other, atol=1e-5)


def test_cross_solver_agreement_two_endogenous(small_two_endo_sample):
    sample, _ = small_two_endo_sample
    r_nested = fit(sample, 0.5, "nested")
    r_contr = fit(sample, 0.5, "contraction")
    assert r_nested.converged and r_contr.converged
    np.testing.assert_allclose(
        r_nested.theta.theta_end, r_contr.theta.theta_end, atol=1e-5
    )


def test_translation_equivariance(small_symmetric_sample):
    sample, _ = small_symmetric_sample
    delta = np.array([0.7, -0.3])
    shifted = Sample(
        y=sample.y + sample.x @ delta, d=sample.d, x=sample.x, z=sample.z
    )
    base = fit(sample, 0.5, "brent")
    moved = fit(shifted, 0.5, "brent")
    assert base.converged and moved.converged
    np.testing.assert_allclose(
        moved.theta.theta1, base.theta.theta1 + delta, atol=1e-6
    )
    np.testing.assert_allclose(
        moved.theta.theta_end, base.theta.theta_end, atol=1e-6
    )


def test_scale_equivariance(small_symmetric_sample):
    sample, _ = small_symmetric_sample
    a = 3.5
    scaled = Sample(y=sample.y * a, d=sample.d, x=sample.x, z=sample.z)
    base = fit(sample, 0.5, "brent")
    moved = fit(scaled, 0.5, "brent")
    assert base.converged and moved.converged
    np.testing.assert_allclose(
        moved.theta.stacked(), base.theta.stacked() * a, atol=1e-6
    )


def test_converged_estimates_satisfy_moment_certificate(
    small_symmetric_sample, small_two_endo_sample
):
    for (sample, _), algo in (
        (small_symmetric_sample, "brent"),
        (small_symmetric_sample, "contraction"),
        (small_two_endo_sample, "nested"),
    ):
        working, _ = prepare(sample)
        for tau in (0.25, 0.5, 0.75):
            result = estimate(working, tau, algo)
            if not result.converged:
                continue
            moments = sample_moments(working, result.theta)
            np.testing.assert_array_equal(moments, result.moments)
            assert np.all(np.abs(moments) <= moment_bounds(working))


def test_status_max_iter_without_rescue(small_symmetric_sample):
    sample, _ = small_symmetric_sample
    result = fit(
        sample,
        0.5,
        "contraction",
        SolverOptions(max_iter=1, canonicalize=False),
    )
    assert not result.converged
    assert result.status == "max_iter"


def test_brent_no_bracket_status(small_symmetric_sample):
    sample, _ = small_symmetric_sample
    result = fit(
        sample,
        0.5,
        "brent",
        SolverOptions(bracket=(100.0, 100.002), canonicalize=False),
    )
    assert result.status == "no_bracket"
    assert not result.converged
    assert np.isfinite(result.theta.theta_end).all()  # TSLS fallback reported


def test_brent_explicit_bracket_matches_default(small_symmetric_sample):
    sample, _ = small_symmetric_sample
    base = fit(sample, 0.5, "brent")
    bracketed = fit(
        sample, 0.5, "brent", SolverOptions(bracket=(0.5, 2.5))
    )
    assert bracketed.converged
    np.testing.assert_allclose(
        bracketed.theta.theta_end, base.theta.theta_end, atol=1e-8
    )


def test_contraction_warm_start(small_symmetric_sample):
    sample, _ = small_symmetric_sample
    first = fit(sample, 0.5, "contraction")
    warm = fit(sample, 0.5, "contraction", start=first.theta)
    assert warm.converged
    np.testing.assert_allclose(
        warm.theta.theta_end, first.theta.theta_end, atol=1e-6
    )
    assert warm.iterations <= first.iterations


def test_diagnose_contraction_on_symmetric_design(small_symmetric_sample):
    sample, _ = small_symmetric_sample
    working, _ = prepare(sample)
    result = estimate(working, 0.5, "brent")
    diag = diagnose_contraction(working, 0.5, result.theta)
    assert diag.jacobian.shape == (1, 1)
    assert 0.0 <= diag.spectral_radius_proxy < 1.0


def test_trace_residuals_decay_at_contracting_rate(small_symmetric_sample):
    sample, _ = small_symmetric_sample
    working, _ = prepare(sample)
    result = estimate(
        working, 0.5, "contraction", SolverOptions(canonicalize=False)
    )
    assert result.converged
    diag = diagnose_contraction(working, 0.5, result.theta)
    residuals = [r for _, r in result.trace if np.isfinite(r) and r > 0]
    if len(residuals) >= 3:
        rate = (residuals[-1] / residuals[0]) ** (1.0 / (len(residuals) - 1))
        assert rate <= diag.spectral_radius_proxy + 0.1


def test_fixed_point_curve_shape_and_crossing(small_symmetric_sample):
    sample, _ = small_symmetric_sample
    working, _ = prepare(sample)
    root = estimate(working, 0.5, "brent").theta.theta_end[0]
    grid = np.linspace(root - 0.5, root + 0.5, 21)
    curve = fixed_point_curve(working, 0.5, grid)
    assert curve.shape == (21, 2)
    np.testing.assert_array_equal(curve[:, 0], grid)
    gap = curve[:, 1] - curve[:, 0]  # M(t) - t changes sign across the root
    assert gap[0] * gap[-1] <= 0.0


def test_fixed_point_curve_rejects_two_endogenous(small_two_endo_sample):
    sample, _ = small_two_endo_sample
    working, _ = prepare(sample)
    with pytest.raises(ValueError):
        fixed_point_curve(working, 0.5, np.linspace(0.0, 1.0, 5))


def test_estimate_near_truth_on_moderate_sample():
    # one specimen with n large enough that estimation error is small
    from ivqr.simulate import LocationScaleConfig, gen_location_scale

    sample, truth = gen_location_scale(
        LocationScaleConfig(n=4000, d_d=1, design="symmetric", seed=77)
    )
    result = fit(sample, 0.5)
    assert result.converged
    np.testing.assert_allclose(
        result.theta.stacked(), truth(0.5).stacked(), atol=0.15
    )


def test_solver_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(tol=0.0)
    with pytest.raises(ValueError):
        SolverOptions(max_iter=0)
    with pytest.raises(ValueError):
        SolverOptions(tol=1e-6, inner_tol=1e-3)
