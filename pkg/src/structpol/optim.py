"""
Damped nonlinear least squares.

A dense Levenberg-Marquardt loop for small global problems and a batched single step
for many independent per-pixel problems. Jacobians are central finite differences with
a pinned step so that solver behaviour is reproducible; a step is only ever accepted
when it lowers the objective.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from structpol.config import FD_STEP, MAX_ITERATIONS, TOLERANCE

logger = logging.getLogger(__name__)

ResidualFn = Callable[[np.ndarray], np.ndarray]

_DAMPING_DOWN = 1.0 / 3.0
_DAMPING_UP = 4.0
_DAMPING_MAX = 1e12


@dataclass
class LMResult:
    """
    Outcome of a Levenberg-Marquardt run.

    Attributes
    ----------
    x : np.ndarray
        Best parameters found.
    cost : float
        Sum of squared residuals at `x`.
    history : List[float]
        Cost at the start and after every accepted step (non-increasing).
    iterations : int
        Number of Jacobian evaluations.
    converged : bool
        False when the iteration cap was hit before the tolerance was met.
    """

    x: np.ndarray
    cost: float
    history: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _fd_steps(x: np.ndarray, step: float) -> np.ndarray:
    return step * np.maximum(1.0, np.abs(x))


def finite_difference_jacobian(
    residual_fn: ResidualFn,
    x: np.ndarray,
    lower: Optional[np.ndarray] = None,
    upper: Optional[np.ndarray] = None,
    step: float = FD_STEP,
) -> np.ndarray:
    """
    Central-difference Jacobian of `residual_fn` at `x`.

    The step for parameter j is `step * max(1, |x_j|)`. Perturbations are clipped into
    [lower, upper], falling back to a one-sided difference on the bound.

    Returns
    -------
    np.ndarray
        (R, P) matrix of partial derivatives.
    """
    x = np.asarray(x, dtype=float)
    lo = np.full_like(x, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    hi = np.full_like(x, np.inf) if upper is None else np.asarray(upper, dtype=float)
    h = _fd_steps(x, step)
    columns = []
    for j in range(x.size):
        plus, minus = x.copy(), x.copy()
        plus[j] = min(x[j] + h[j], hi[j])
        minus[j] = max(x[j] - h[j], lo[j])
        width = plus[j] - minus[j]
        if width <= 0:
            columns.append(np.zeros_like(np.asarray(residual_fn(x), dtype=float)))
            continue
        columns.append((np.asarray(residual_fn(plus), dtype=float) - np.asarray(residual_fn(minus), dtype=float)) / width)
    return np.stack(columns, axis=-1)


def _solve_damped(jtj: np.ndarray, jtr: np.ndarray, damping: float) -> np.ndarray:
    scaled = jtj + damping * np.diag(np.maximum(np.diag(jtj), 1e-12))
    try:
        return -np.linalg.solve(scaled, jtr)
    except np.linalg.LinAlgError:
        return -np.linalg.lstsq(scaled, jtr, rcond=None)[0]


def levenberg_marquardt(
    residual_fn: ResidualFn,
    x0: np.ndarray,
    lower: Optional[np.ndarray] = None,
    upper: Optional[np.ndarray] = None,
    max_iterations: int = MAX_ITERATIONS,
    tolerance: float = TOLERANCE,
    damping: float = 1e-3,
    step: float = FD_STEP,
) -> LMResult:
    """
    Minimize sum(residual_fn(x) ** 2) with Marquardt-scaled damping.

    Parameters
    ----------
    residual_fn : Callable[[np.ndarray], np.ndarray]
        Maps a parameter vector (P,) onto a residual vector (R,).
    x0 : np.ndarray
        Starting point; projected into the bounds.
    lower, upper : np.ndarray, optional
        Box constraints; trial points are clipped into them.
    max_iterations : int
        Cap on Jacobian evaluations. 0 returns `x0` unchanged.
    tolerance : float
        Relative cost decrease below which the run is considered converged.
    damping : float
        Initial damping factor.
    step : float
        Finite-difference step scale.

    Returns
    -------
    LMResult
        The best point; its `history` is monotone non-increasing.
    """
    lo = None if lower is None else np.asarray(lower, dtype=float)
    hi = None if upper is None else np.asarray(upper, dtype=float)

    def project(x: np.ndarray) -> np.ndarray:
        if lo is not None:
            x = np.maximum(x, lo)
        if hi is not None:
            x = np.minimum(x, hi)
        return x

    x = project(np.asarray(x0, dtype=float).copy())
    r = np.asarray(residual_fn(x), dtype=float)
    cost = float(r @ r)
    result = LMResult(x=x, cost=cost, history=[cost])
    if max_iterations <= 0:
        result.converged = True
        return result

    for iteration in range(1, max_iterations + 1):
        result.iterations = iteration
        jac = finite_difference_jacobian(residual_fn, x, lo, hi, step)
        jtj, jtr = jac.T @ jac, jac.T @ r
        if not np.all(np.isfinite(jtj)) or np.max(np.abs(jtr), initial=0.0) <= 1e-300:
            result.converged = True
            break

        accepted = False
        while damping < _DAMPING_MAX:
            trial = project(x + _solve_damped(jtj, jtr, damping))
            r_trial = np.asarray(residual_fn(trial), dtype=float)
            cost_trial = float(r_trial @ r_trial)
            if np.isfinite(cost_trial) and cost_trial < cost:
                accepted = True
                break
            damping *= _DAMPING_UP
        if not accepted:
            result.converged = True
            break

        decrease = (cost - cost_trial) / max(cost, 1e-300)
        x, r, cost = trial, r_trial, cost_trial
        damping = max(damping * _DAMPING_DOWN, 1e-12)
        result.x, result.cost = x, cost
        result.history.append(cost)
        logger.debug("LM iteration %d: cost %.6e damping %.1e", iteration, cost, damping)
        if decrease < tolerance:
            result.converged = True
            break

    if not result.converged:
        logger.warning("Levenberg-Marquardt stopped at the iteration cap (%d) with cost %.6e", max_iterations, cost)
    return result


@dataclass
class BatchStep:
    """Result of one batched damped step: new parameters, per-problem cost and damping, acceptance mask."""

    x: np.ndarray
    cost: np.ndarray
    damping: np.ndarray
    accepted: np.ndarray


def batched_levenberg_marquardt_step(
    residual_fn: ResidualFn,
    x: np.ndarray,
    damping: np.ndarray,
    lower: Optional[np.ndarray] = None,
    upper: Optional[np.ndarray] = None,
    step: float = FD_STEP,
) -> BatchStep:
    """
    One damped Gauss-Newton step for N independent problems of P parameters.

    `residual_fn` maps (N, P) onto (N, R); problem n only depends on row n. Each problem
    keeps its own damping, which is lowered on acceptance and raised on rejection.
    Rejected problems keep their current parameters.
    """
    x = np.asarray(x, dtype=float)
    damping = np.asarray(damping, dtype=float)
    r = np.asarray(residual_fn(x), dtype=float)
    cost = np.sum(r * r, axis=-1)

    h = _fd_steps(x, step)
    jac = np.empty(r.shape + (x.shape[1],))
    for j in range(x.shape[1]):
        plus, minus = x.copy(), x.copy()
        plus[:, j] += h[:, j]
        minus[:, j] -= h[:, j]
        if lower is not None:
            minus[:, j] = np.maximum(minus[:, j], lower[j])
        if upper is not None:
            plus[:, j] = np.minimum(plus[:, j], upper[j])
        width = np.where(plus[:, j] > minus[:, j], plus[:, j] - minus[:, j], 1.0)
        jac[..., j] = (np.asarray(residual_fn(plus)) - np.asarray(residual_fn(minus))) / width[:, None]

    jtj = np.einsum("nrp,nrq->npq", jac, jac)
    jtr = np.einsum("nrp,nr->np", jac, r)
    diag = np.maximum(np.einsum("npp->np", jtj), 1e-12)
    scaled = jtj + damping[:, None, None] * np.einsum("np,pq->npq", diag, np.eye(x.shape[1]))
    try:
        delta = -np.linalg.solve(scaled, jtr[..., None])[..., 0]
    except np.linalg.LinAlgError:
        delta = -np.einsum("npq,nq->np", np.linalg.pinv(scaled), jtr)

    trial = x + delta
    if lower is not None:
        trial = np.maximum(trial, lower)
    if upper is not None:
        trial = np.minimum(trial, upper)
    r_trial = np.asarray(residual_fn(trial), dtype=float)
    cost_trial = np.sum(r_trial * r_trial, axis=-1)

    accepted = np.isfinite(cost_trial) & (cost_trial < cost)
    return BatchStep(
        x=np.where(accepted[:, None], trial, x),
        cost=np.where(accepted, cost_trial, cost),
        damping=np.clip(np.where(accepted, damping * _DAMPING_DOWN, damping * _DAMPING_UP), 1e-12, _DAMPING_MAX),
        accepted=accepted,
    )


def objective(residuals: np.ndarray) -> float:
    r = np.asarray(residuals, dtype=float)
    return float(np.sum(r * r))

