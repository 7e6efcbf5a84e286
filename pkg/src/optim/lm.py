"""
Levenberg-Marquardt driver shared by spline fitting, pose-graph optimization,
bundle adjustment and PnP refinement.

A problem supplies its cost, a linearization (residual vector and sparse
Jacobian, already robust-weighted where relevant) and a retraction that
applies a tangent-space step to its state. The linear solve can be replaced
by the problem, e.g. with a Schur complement.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Protocol, Tuple
import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from src.errors import NormalEquationError
from src.logger import Logger

MAX_LAMBDA = 1e16
MIN_LAMBDA = 1e-14


class LeastSquaresProblem(Protocol):
    def cost(self, x: Any) -> float: ...

    def linearize(self, x: Any) -> Tuple[np.ndarray, sp.spmatrix]: ...

    def retract(self, x: Any, dx: np.ndarray) -> Any: ...


@dataclass
class LmResult:
    x: Any
    cost: float
    iterations: int
    history: List[float] = field(default_factory=list)
    reason: str = ""


def damped_solve(hessian: sp.spmatrix, gradient: np.ndarray, lam: float,
                 damping_floor: float = 1e-9) -> np.ndarray:
    """Solve (H + lam * max(diag(H), floor)) dx = -g with a sparse direct solver."""
    diag = np.maximum(hessian.diagonal(), damping_floor)
    system = (hessian + sp.diags(lam * diag)).tocsc()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            dx = spla.spsolve(system, -gradient)
        except (RuntimeError, ValueError):
            return np.full_like(gradient, np.nan)
    return np.atleast_1d(dx)


def condition_estimate(hessian: sp.spmatrix) -> float:
    diag = np.abs(hessian.diagonal())
    if diag.size == 0 or diag.min() <= 0:
        return float("inf")
    return float(diag.max() / diag.min())


def levenberg_marquardt(
    problem: LeastSquaresProblem,
    x0: Any,
    max_iter: int = 50,
    lambda0: float = 1e-4,
    xtol: float = 1e-12,
    ftol: float = 1e-12,
    stall_tol: float = 1e-9,
    max_stall: int = 3,
    cost_floor: float = 0.0,
    solve: Optional[Callable[[sp.spmatrix, np.ndarray, np.ndarray, float], np.ndarray]] = None,
    logger: Optional[Logger] = None,
    label: str = "lm",
) -> LmResult:
    """
    Minimize a nonlinear least-squares problem.

    Args:
        problem: Cost, linearization and retraction provider
        x0: Initial state
        max_iter: Maximum number of accepted or attempted outer iterations
        lambda0: Initial damping relative to diag(J^T J)
        xtol: Stop when the step norm falls below this
        ftol: Stop when the relative cost decrease falls below this
        stall_tol: Relative decrease below which an accepted step counts as stalled
        max_stall: Stop after this many consecutive stalled steps
        cost_floor: Stop when the cost is at or below this
        solve: Optional linear solver solve(J, r, lam) -> dx replacing the damped normal equations
        logger: Optional logger, one line per iteration
        label: Prefix for log lines

    Returns:
        LmResult with the final state, its cost and the history of accepted costs
    """
    x = x0
    cost = float(problem.cost(x))
    history = [cost]
    lam = lambda0
    reason = "max iterations"
    iterations = 0
    stalled = 0

    for iterations in range(1, max_iter + 1):
        if cost <= cost_floor:
            reason = "cost floor"
            iterations -= 1
            break
        r, jac = problem.linearize(x)
        jac = sp.csr_matrix(jac)
        gradient = jac.T @ r
        if not np.any(gradient):
            reason = "zero gradient"
            break
        hessian = None if solve is not None else (jac.T @ jac).tocsc()

        accepted = False
        any_finite = False
        stop = False
        while lam < MAX_LAMBDA:
            if solve is not None:
                dx = solve(jac, r, lam)
            else:
                dx = damped_solve(hessian, gradient, lam)
            if not np.all(np.isfinite(dx)):
                lam *= 10.0
                continue
            any_finite = True
            if np.linalg.norm(dx) <= xtol:
                reason = "xtol"
                stop = True
                break
            x_new = problem.retract(x, dx)
            new_cost = float(problem.cost(x_new))
            if np.isfinite(new_cost) and new_cost <= cost:
                decrease = cost - new_cost
                x, cost = x_new, new_cost
                history.append(cost)
                lam = max(lam / 10.0, MIN_LAMBDA)
                accepted = True
                scale = max(history[-2], 1e-300)
                stalled = stalled + 1 if decrease <= stall_tol * scale else 0
                if decrease <= ftol * scale:
                    reason = "ftol"
                    stop = True
                elif stalled >= max_stall:
                    reason = "stalled"
                    stop = True
                break
            lam *= 10.0

        if logger is not None:
            logger.add_log(f"{label} iter {iterations}: cost {cost:.6e} lambda {lam:.1e}"
                           f"{'' if accepted else ' (rejected)'}")
        if not any_finite:
            if hessian is None:
                hessian = (jac.T @ jac).tocsc()
            raise NormalEquationError(f"{label}: normal equations could not be solved",
                                      condition=condition_estimate(hessian))
        if stop:
            break
        if not accepted:
            reason = "no decrease"
            break

    if logger is not None:
        logger.add_log(f"{label} finished after {iterations} iteration(s): cost {cost:.6e} ({reason})")
    return LmResult(x=x, cost=cost, iterations=iterations, history=history, reason=reason)
