"""Small dense Levenberg-Marquardt solver with an optional Huber loss.

The loss acts on the squared norm of each residual block (``block_size``
consecutive residuals, e.g. the two pixel components of a reprojection
error), in the form ``rho(s) = s`` for ``s <= delta**2`` and
``2*delta*sqrt(s) - delta**2`` beyond. Robust problems are solved by
iteratively reweighted least squares: each linearisation uses the weights
``rho'(s)`` of the current residuals, and a step is accepted only if the
robust cost actually decreases.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NumericalFailure

LAMBDA_INIT = 1e-4
LAMBDA_UP = 10.0
LAMBDA_DOWN = 10.0
LAMBDA_MAX = 1e12


@dataclass(frozen=True)
class HuberLoss:
    delta: float = 2.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("Huber delta must be positive")

    def rho(self, s: np.ndarray) -> np.ndarray:
        """Loss of squared block norms ``s``."""
        s = np.asarray(s, dtype=float)
        d = self.delta
        return np.where(s <= d * d, s, 2.0 * d * np.sqrt(s) - d * d)

    def weight(self, s: np.ndarray) -> np.ndarray:
        """Derivative ``rho'(s)``, used as the IRLS weight."""
        s = np.asarray(s, dtype=float)
        d = self.delta
        return np.where(s <= d * d, 1.0, d / np.sqrt(np.maximum(s, d * d)))


@dataclass
class LMProblem:
    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    # manifold update; plain vector addition when omitted
    plus: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    loss: Optional[HuberLoss] = None
    block_size: int = 1


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    initial_cost: float
    iterations: int
    converged: bool
    cost_history: list


def block_norms_sq(r: np.ndarray, block_size: int) -> np.ndarray:
    return np.square(r).reshape(-1, block_size).sum(axis=1)


def robust_cost(r: np.ndarray, loss: Optional[HuberLoss], block_size: int = 1) -> float:
    """Half the summed (robustified) squared block norms."""
    s = block_norms_sq(r, block_size)
    if loss is None:
        return 0.5 * float(s.sum())
    return 0.5 * float(loss.rho(s).sum())


def levenberg_marquardt(
    problem: LMProblem,
    max_iters: int = 10,
    rel_tol: float = 1e-8,
    step_tol: float = 1e-10,
) -> LMResult:
    """Minimise the robust cost of ``problem``.

    One iteration is one damped linear solve, whether or not its step is
    accepted. Damping starts at 1e-4 and is multiplied by 10 after a
    rejected step and divided by 10 after an accepted one.
    """
    plus = problem.plus or (lambda x, dx: x + dx)
    loss, bs = problem.loss, problem.block_size
    x = np.array(problem.x0, dtype=float, copy=True)
    r = np.asarray(problem.residual(x), dtype=float)
    cost = robust_cost(r, loss, bs)
    history = [cost]
    initial = cost
    lam = LAMBDA_INIT
    need_linearise = True
    converged = cost == 0.0
    it = 0
    while it < max_iters and not converged:
        if need_linearise:
            J = np.asarray(problem.jacobian(x), dtype=float)
            if J.shape[0] != r.shape[0]:
                raise ValueError(f"Jacobian has {J.shape[0]} rows for {r.shape[0]} residuals")
            if loss is None:
                Jw = J
            else:
                w = np.repeat(loss.weight(block_norms_sq(r, bs)), bs)
                Jw = J * w[:, None]
            H = Jw.T @ J
            g = Jw.T @ r
            diag = np.maximum(np.diag(H), 1e-12)
            need_linearise = False
        it += 1
        try:
            dx = np.linalg.solve(H + lam * np.diag(diag), -g)
        except np.linalg.LinAlgError:
            dx = None
        if dx is None or not np.all(np.isfinite(dx)):
            lam *= LAMBDA_UP
            if lam > LAMBDA_MAX:
                raise NumericalFailure("normal equations are singular")
            continue
        x_new = plus(x, dx)
        r_new = np.asarray(problem.residual(x_new), dtype=float)
        cost_new = robust_cost(r_new, loss, bs)
        if np.isfinite(cost_new) and cost_new < cost:
            decrease = cost - cost_new
            x, r = x_new, r_new
            prev, cost = cost, cost_new
            history.append(cost)
            lam = max(lam / LAMBDA_DOWN, 1e-15)
            need_linearise = True
            if cost == 0.0 or decrease < rel_tol * prev or np.linalg.norm(dx) < step_tol:
                converged = True
        else:
            if np.linalg.norm(dx) < step_tol:
                converged = True
                break
            lam *= LAMBDA_UP
            if lam > LAMBDA_MAX:
                # damping cannot find a descent step: we are at a minimum
                converged = True
                break
    return LMResult(x=x, cost=cost, initial_cost=initial, iterations=it, converged=converged, cost_history=history)
