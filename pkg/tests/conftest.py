"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from ivqr.model import Sample
from ivqr.simulate import LocationScaleConfig, gen_location_scale


def random_qr_instance(rng: np.random.Generator, n: int, p: int):
    """One random weighted QR instance in general position."""
    design = rng.standard_normal((n, p))
    design[:, 0] = 1.0  # intercept keeps the problem well-posed at small n
    response = rng.standard_normal(n) * 2.0 + design @ rng.standard_normal(p)
    weights = rng.uniform(0.2, 3.0, size=n)
    tau = float(rng.uniform(0.1, 0.9))
    return design, response, weights, tau


def weighted_check_loss(design, response, weights, tau, beta) -> float:
    """(1/N) * sum_i w_i * rho_tau(y_i - x_i'beta)."""
    r = weights * (response - design @ beta)
    return float(np.mean(r * (tau - (r < 0.0))))


def brute_force_qr(design, response, weights, tau):
    """Exact minimum of the weighted check loss over all basic solutions.

    Every vertex of the LP interpolates p rows, so enumerating all p-subsets
    with an invertible design block covers every candidate optimum.
    """
    from itertools import combinations

    n, p = design.shape
    best = np.inf
    best_beta = None
    for rows in combinations(range(n), p):
        block = design[list(rows)]
        try:
            beta = np.linalg.solve(block, response[list(rows)])
        except np.linalg.LinAlgError:
            continue
        obj = weighted_check_loss(design, response, weights, tau, beta)
        if obj < best:
            best, best_beta = obj, beta
    return best, best_beta


@pytest.fixture(scope="session")
def small_symmetric_sample():
    """One symmetric location-scale dataset, d_d = 1, reused across tests."""
    sample, truth = gen_location_scale(
        LocationScaleConfig(n=400, d_d=1, design="symmetric", seed=101)
    )
    return sample, truth


@pytest.fixture(scope="session")
def small_two_endo_sample():
    sample, truth = gen_location_scale(
        LocationScaleConfig(n=400, d_d=2, design="symmetric", seed=202)
    )
    return sample, truth


def toy_sample(n=60, seed=0, d_d=1) -> Sample:
    """Tiny well-behaved sample for fast validation-path tests."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(0.5, 1.5, size=(n, d_d))
    d = z + rng.uniform(0.1, 0.4, size=(n, d_d))
    x = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = x @ np.array([1.0, 0.5]) + d @ np.ones(d_d) + rng.standard_normal(n)
    return Sample(y=y, d=d, x=x, z=z)
