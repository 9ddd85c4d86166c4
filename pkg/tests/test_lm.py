"""Tests for the damped least-squares optimizer."""

from __future__ import annotations

import logging

import numpy as np
import pytest

from pairjitter.errors import DegenerateFitError, FitError
from pairjitter.lm import (
    covariance_matrix,
    finite_difference_jacobian,
    levenberg_marquardt,
    null_combination,
)

T = np.linspace(0.0, 10.0, 50)


def _decay_residuals(x: np.ndarray) -> np.ndarray:
    if x[1] <= 0:
        raise ValueError("rate must be positive")
    return 3.0 * np.exp(-0.5 * T) - x[0] * np.exp(-x[1] * T)


def test_recovers_exact_parameters() -> None:
    result = levenberg_marquardt(_decay_residuals, [1.0, 1.0])
    assert result.converged
    np.testing.assert_allclose(result.x, [3.0, 0.5], rtol=1e-6)
    assert result.cost < 1e-12


def test_accepted_steps_never_increase_cost() -> None:
    result = levenberg_marquardt(_decay_residuals, [10.0, 3.0])
    history = np.asarray(result.cost_history)
    assert history.size >= 2
    assert np.all(np.diff(history) <= 0.0)


def test_invalid_trial_points_are_rejected_not_raised() -> None:
    result = levenberg_marquardt(_decay_residuals, [3.0, 0.01], scales=[1.0, 0.01])
    assert result.x[1] > 0
    assert result.converged


def test_iteration_cap_reports_non_convergence(caplog: pytest.LogCaptureFixture) -> None:
    with caplog.at_level(logging.WARNING, logger="pairjitter.lm"):
        result = levenberg_marquardt(_decay_residuals, [10.0, 3.0], max_iterations=1)
    assert not result.converged
    assert "iteration limit" in result.message
    assert "did not converge" in caplog.text


def test_invalid_start_is_fit_error() -> None:
    with pytest.raises(FitError):
        levenberg_marquardt(_decay_residuals, [1.0, -1.0])


def test_finite_difference_matches_analytic() -> None:
    x = np.array([2.0, 0.7])
    numeric = finite_difference_jacobian(_decay_residuals, x)
    analytic = np.column_stack([-np.exp(-x[1] * T), x[0] * T * np.exp(-x[1] * T)])
    np.testing.assert_allclose(numeric, analytic, rtol=1e-6, atol=1e-9)


def test_null_combination_names_parameters() -> None:
    v = np.linspace(1.0, 2.0, 20)
    w = np.cos(v)
    assert null_combination(np.column_stack([v, w]), ["a", "b"]) is None
    combination = null_combination(np.column_stack([v, 2.0 * v, w]), ["a", "b", "c"])
    assert combination is not None
    assert "a" in combination and "b" in combination and "c" not in combination
    assert null_combination(np.column_stack([v, np.zeros_like(v)]), ["a", "b"]) == "b"


def test_covariance_scaled_by_reduced_chi_square() -> None:
    J = np.eye(3)[:, :2] * 2.0
    cov = covariance_matrix(J, cost=4.0, dof=2)
    np.testing.assert_allclose(cov, np.eye(2) * 0.25 * 2.0)
    with pytest.raises(FitError):
        covariance_matrix(J, 1.0, 0)
    with pytest.raises(DegenerateFitError):
        covariance_matrix(np.zeros((3, 2)), 1.0, 1)
