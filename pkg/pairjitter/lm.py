"""Damped least squares (Levenberg–Marquardt) for small dense problems.

The solver works on a vector of weighted residuals ``r(x)`` and minimizes
``r·r``. Damping is Marquardt-style: the diagonal of ``JᵀJ`` is inflated by
``1 + λ``. A trial step is accepted only when it does not increase the cost;
otherwise ``λ`` grows tenfold and the step is recomputed. A residual
function signals an invalid parameter vector by raising :class:`ValueError`
(for example a negative width), which is treated like a rejected step.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Final, Optional

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateFitError, FitError

logger = logging.getLogger(__name__)

__all__ = [
    "LMResult",
    "levenberg_marquardt",
    "finite_difference_jacobian",
    "null_combination",
    "covariance_matrix",
]

Residuals = Callable[[NDArray[np.float64]], NDArray[np.float64]]
Jacobian = Callable[[NDArray[np.float64]], NDArray[np.float64]]

XTOL: Final = 1e-8
FTOL: Final = 1e-12
MAX_ITERATIONS: Final = 500
_LAMBDA_START: Final = 1e-3
_LAMBDA_MAX: Final = 1e16
_LAMBDA_MIN: Final = 1e-12
_SINGULAR_RCOND: Final = 1e-10


@dataclass(frozen=True, eq=False)
class LMResult:
    """Outcome of :func:`levenberg_marquardt`."""

    x: NDArray[np.float64]
    residuals: NDArray[np.float64]
    jacobian: NDArray[np.float64]
    cost: float
    iterations: int
    converged: bool
    message: str
    cost_history: tuple[float, ...]


def finite_difference_jacobian(
    fun: Residuals,
    x: NDArray[np.float64],
    scales: Optional[NDArray[np.float64]] = None,
    rel_step: float = 1e-6,
) -> NDArray[np.float64]:
    """Central-difference Jacobian; one-sided where a neighbour is invalid."""

    x = np.asarray(x, dtype=float)
    typical = np.ones_like(x) if scales is None else np.asarray(scales, dtype=float)
    f0: Optional[NDArray[np.float64]] = None
    columns = []
    for j in range(x.size):
        h = rel_step * max(abs(x[j]), typical[j])
        up = x.copy()
        down = x.copy()
        up[j] += h
        down[j] -= h
        try:
            f_up = fun(up)
        except ValueError:
            f_up = None
        try:
            f_down = fun(down)
        except ValueError:
            f_down = None
        if f_up is not None and f_down is not None:
            columns.append((f_up - f_down) / (2.0 * h))
            continue
        if f0 is None:
            f0 = fun(x)
        if f_up is not None:
            columns.append((f_up - f0) / h)
        elif f_down is not None:
            columns.append((f0 - f_down) / h)
        else:
            raise FitError(f"Cannot differentiate with respect to parameter {j}: both neighbours invalid.")
    return np.column_stack(columns)


def null_combination(
    jacobian: NDArray[np.float64], names: Sequence[str], rcond: float = _SINGULAR_RCOND
) -> Optional[str]:
    """Describe the null direction of ``JᵀJ`` or return ``None`` if it has full rank.

    Columns are scaled to unit norm first so the test does not depend on the
    units of each parameter.
    """

    norms = np.linalg.norm(jacobian, axis=0)
    if np.any(norms == 0):
        idx = int(np.flatnonzero(norms == 0)[0])
        return names[idx]
    _, singular, vt = np.linalg.svd(jacobian / norms, full_matrices=False)
    if singular[-1] > rcond * singular[0]:
        return None
    direction = vt[-1]
    direction = direction / direction[np.argmax(np.abs(direction))]
    terms = [
        f"{coef:+.3g}·{name}" for coef, name in zip(direction, names) if abs(coef) >= 1e-3
    ]
    return " ".join(terms).lstrip("+")


def covariance_matrix(jacobian: NDArray[np.float64], cost: float, dof: int) -> NDArray[np.float64]:
    """``(JᵀJ)⁻¹`` scaled by the reduced chi-square ``cost / dof``."""

    if dof <= 0:
        raise FitError("No degrees of freedom left for a covariance estimate.")
    normal = jacobian.T @ jacobian
    try:
        inverse = np.linalg.inv(normal)
    except np.linalg.LinAlgError as exc:
        raise DegenerateFitError("(singular normal matrix)") from exc
    cov = inverse * (cost / dof)
    return 0.5 * (cov + cov.T)


def levenberg_marquardt(
    fun: Residuals,
    x0: Sequence[float],
    jac: Optional[Jacobian] = None,
    *,
    scales: Optional[Sequence[float]] = None,
    xtol: float = XTOL,
    ftol: float = FTOL,
    max_iterations: int = MAX_ITERATIONS,
) -> LMResult:
    """Minimize ``fun(x)·fun(x)`` starting from ``x0``.

    Convergence is declared when every parameter moves by less than ``xtol``
    relative to ``max(|x|, scale)``, or when the cost drops by less than
    ``ftol`` relative. Reaching ``max_iterations`` returns the last accepted
    point with ``converged=False``.
    """

    x = np.asarray(x0, dtype=float).copy()
    typical = np.ones_like(x) if scales is None else np.asarray(scales, dtype=float)

    def jacobian_at(point: NDArray[np.float64]) -> NDArray[np.float64]:
        if jac is not None:
            return np.asarray(jac(point), dtype=float)
        return finite_difference_jacobian(fun, point, typical)

    try:
        r = np.asarray(fun(x), dtype=float)
    except ValueError as exc:
        raise FitError(f"Initial parameters are invalid: {exc}") from exc
    if not np.all(np.isfinite(r)):
        raise FitError("Residuals are not finite at the initial parameters.")
    cost = float(r @ r)
    history = [cost]
    lam = _LAMBDA_START
    J = jacobian_at(x)
    message = f"iteration limit ({max_iterations}) reached"
    converged = False
    iterations = 0

    for iterations in range(1, max_iterations + 1):
        gradient = J.T @ r
        normal = J.T @ J
        diag = np.diag(normal).copy()
        diag[diag <= 0] = 1.0
        accepted = False
        while lam <= _LAMBDA_MAX:
            try:
                step = np.linalg.solve(normal + lam * np.diag(diag), -gradient)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = x + step
            try:
                r_trial = np.asarray(fun(trial), dtype=float)
            except ValueError:
                lam *= 10.0
                continue
            trial_cost = float(r_trial @ r_trial) if np.all(np.isfinite(r_trial)) else math.inf
            if trial_cost <= cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True
            message = "no cost-reducing step exists (at a minimum to machine precision)"
            break

        rel_step = float(np.max(np.abs(step) / np.maximum(np.abs(x), typical)))
        rel_cost = (cost - trial_cost) / cost if cost > 0 else 0.0
        x, r, cost = trial, r_trial, trial_cost
        history.append(cost)
        lam = max(lam / 10.0, _LAMBDA_MIN)
        logger.debug("LM iter %d: cost=%.9g λ=%.3g step=%.3g", iterations, cost, lam, rel_step)
        J = jacobian_at(x)
        if rel_step < xtol:
            converged = True
            message = f"relative parameter step below {xtol:g}"
            break
        if rel_cost < ftol:
            converged = True
            message = f"relative cost change below {ftol:g}"
            break

    if not converged:
        logger.warning("Fit did not converge within %d iterations.", max_iterations)
    return LMResult(
        x=x,
        residuals=r,
        jacobian=J,
        cost=cost,
        iterations=iterations,
        converged=converged,
        message=message,
        cost_history=tuple(history),
    )
