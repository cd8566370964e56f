"""Camera pose from 2D-3D matches by robust reprojection minimisation.

The pose ``T_cw`` is updated on the left: ``R <- Exp(w) R``,
``t <- Exp(w) t + v``, so a camera-frame point moves as
``p_c <- Exp(w) p_c + v`` and its derivative with respect to ``(w, v)`` at
zero is ``[-[p_c]x, I]``. Residuals are ``pi(T_cw p_w) - u`` per match.
"""

from __future__ import annotations

import numpy as np

from .errors import InsufficientMatches, NumericalFailure
from .geometry import CameraIntrinsics, RigidTransform, so3_exp
from ._kernels import pose_lm_kernel
from .lm import HuberLoss, LMProblem, LMResult, levenberg_marquardt

MIN_POSE_MATCHES = 4
REL_TOL = 1e-8
STEP_TOL = 1e-10


def _unpack(x: np.ndarray):
    return x[:9].reshape(3, 3), x[9:12]


def pack_pose(T: RigidTransform) -> np.ndarray:
    return np.concatenate([T.R.ravel(), T.t])


def unpack_pose(x: np.ndarray) -> RigidTransform:
    R, t = _unpack(x)
    return RigidTransform.from_matrix(R, t)


def pose_plus(x: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Left increment ``(w, v)`` applied to a packed pose."""
    R, t = _unpack(x)
    dR = so3_exp(delta[:3])
    return np.concatenate([(dR @ R).ravel(), dR @ t + delta[3:6]])


def reprojection_residuals(x: np.ndarray, points_w: np.ndarray, uv: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    R, t = _unpack(x)
    P = points_w @ R.T + t
    zi = 1.0 / P[:, 2]
    r = np.empty_like(uv)
    r[:, 0] = K.fx * P[:, 0] * zi + K.cx - uv[:, 0]
    r[:, 1] = K.fy * P[:, 1] * zi + K.cy - uv[:, 1]
    return r.ravel()


def reprojection_jacobian(x: np.ndarray, points_w: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """(2N, 6) derivative of the residuals with respect to the left increment."""
    R, t = _unpack(x)
    P = points_w @ R.T + t
    X, Y, Z = P[:, 0], P[:, 1], P[:, 2]
    zi = 1.0 / Z
    xz, yz = X * zi, Y * zi
    J = np.empty((len(P), 2, 6))
    fx, fy = K.fx, K.fy
    # d(pi)/d(p_c) @ [-[p_c]x, I], expanded
    J[:, 0, 0] = -fx * xz * yz
    J[:, 0, 1] = fx * (1.0 + xz * xz)
    J[:, 0, 2] = -fx * yz
    J[:, 0, 3] = fx * zi
    J[:, 0, 4] = 0.0
    J[:, 0, 5] = -fx * xz * zi
    J[:, 1, 0] = -fy * (1.0 + yz * yz)
    J[:, 1, 1] = fy * xz * yz
    J[:, 1, 2] = fy * xz
    J[:, 1, 3] = 0.0
    J[:, 1, 4] = fy * zi
    J[:, 1, 5] = -fy * yz * zi
    return J.reshape(-1, 6)


def estimate_pose(
    points_w: np.ndarray,
    uv: np.ndarray,
    T_init: RigidTransform,
    K: CameraIntrinsics,
    huber_delta: float = 2.0,
    max_iters: int = 10,
):
    """Refine ``T_init`` against matched world points and pixels.

    Returns ``(T_cw, inlier_mask, lm_result)``; inliers are matches whose
    final reprojection error is at most ``huber_delta`` pixels.
    """
    points_w = np.asarray(points_w, dtype=float).reshape(-1, 3)
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    if len(points_w) < MIN_POSE_MATCHES:
        raise InsufficientMatches(f"{len(points_w)} matches, need at least {MIN_POSE_MATCHES}")
    R, t, cost, initial, iters, status, history = pose_lm_kernel(
        np.ascontiguousarray(T_init.R),
        np.ascontiguousarray(T_init.t, dtype=float),
        np.ascontiguousarray(points_w),
        np.ascontiguousarray(uv),
        float(K.fx),
        float(K.fy),
        float(K.cx),
        float(K.cy),
        float(huber_delta),
        int(max_iters),
        REL_TOL,
        STEP_TOL,
    )
    if status == 2:
        raise NumericalFailure("normal equations are singular")
    x = np.concatenate([R.ravel(), t])
    result = LMResult(
        x=x, cost=cost, initial_cost=initial, iterations=int(iters), converged=status == 0, cost_history=list(history)
    )
    if not np.all(np.isfinite(result.x)):
        raise NumericalFailure("pose estimate is not finite")
    r = reprojection_residuals(result.x, points_w, uv, K).reshape(-1, 2)
    with np.errstate(invalid="ignore"):
        inliers = np.hypot(r[:, 0], r[:, 1]) <= huber_delta
    return unpack_pose(result.x), inliers, result


def estimate_pose_reference(points_w, uv, T_init: RigidTransform, K: CameraIntrinsics, huber_delta=2.0, max_iters=10):
    """:func:`estimate_pose` through the generic solver; returns the LM result."""
    points_w = np.asarray(points_w, dtype=float).reshape(-1, 3)
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    problem = LMProblem(
        residual=lambda x: reprojection_residuals(x, points_w, uv, K),
        jacobian=lambda x: reprojection_jacobian(x, points_w, K),
        x0=pack_pose(T_init),
        plus=pose_plus,
        loss=HuberLoss(huber_delta),
        block_size=2,
    )
    return levenberg_marquardt(problem, max_iters=max_iters, rel_tol=REL_TOL, step_tol=STEP_TOL)
