"""Two-view relative pose: essential matrix by RANSAC and its decomposition.

Minimal models come from the normalised 8-point algorithm, solved for a
whole batch of random samples at once. Correspondences are scored by the
symmetric epipolar distance in pixels, taken as the root mean square of the
two point-to-epipolar-line distances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CheiralityAmbiguity, DegenerateConfiguration, InsufficientCorrespondences
from .geometry import CameraIntrinsics, RigidTransform, skew, triangulate_points


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 500
    threshold_px: float = 2.0
    confidence: float = 0.99
    min_inlier_ratio: float = 0.30
    batch: int = 50


def _homogeneous(x: np.ndarray) -> np.ndarray:
    return np.column_stack([x, np.ones(len(x))])


def _hartley(x: np.ndarray):
    """Similarity moving (..., N, 2) points to zero mean and mean norm sqrt(2)."""
    mean = x.mean(axis=-2, keepdims=True)
    d = np.linalg.norm(x - mean, axis=-1).mean(axis=-1)
    s = np.sqrt(2.0) / np.maximum(d, 1e-12)
    T = np.zeros(x.shape[:-2] + (3, 3))
    T[..., 0, 0] = s
    T[..., 1, 1] = s
    T[..., 0, 2] = -s * mean[..., 0, 0]
    T[..., 1, 2] = -s * mean[..., 0, 1]
    T[..., 2, 2] = 1.0
    xn = (x - mean) * s[..., None, None]
    return xn, T


def project_to_essential(E: np.ndarray) -> np.ndarray:
    """Closest matrix with singular values (s, s, 0), for one or a batch."""
    U, S, Vt = np.linalg.svd(E)
    s = 0.5 * (S[..., 0] + S[..., 1])
    D = np.zeros(E.shape[:-2] + (3,))
    D[..., 0] = s
    D[..., 1] = s
    return (U * D[..., None, :]) @ Vt


def eight_point(x1: np.ndarray, x2: np.ndarray):
    """Essential matrices from normalised image coordinates.

    ``x1``, ``x2`` are (N, 2) or a batch (B, N, 2) with N >= 8, satisfying
    ``x2^T E x1 = 0``. Returns ``(E, degenerate)``; ``degenerate`` flags
    samples whose linear system has more than a one-dimensional null space
    (for example zero baseline or too few distinct points).
    """
    single = x1.ndim == 2
    if single:
        x1, x2 = x1[None], x2[None]
    a, Ta = _hartley(x1)
    b, Tb = _hartley(x2)
    A = np.concatenate(
        [
            b[..., :1] * a[..., :1],
            b[..., :1] * a[..., 1:],
            b[..., :1],
            b[..., 1:] * a[..., :1],
            b[..., 1:] * a[..., 1:],
            b[..., 1:],
            a[..., :1],
            a[..., 1:],
            np.ones_like(a[..., :1]),
        ],
        axis=-1,
    )
    if A.shape[-2] < 9:
        A = np.concatenate([A, np.zeros(A.shape[:-2] + (9 - A.shape[-2], 9))], axis=-2)
    _, S, Vt = np.linalg.svd(A)
    F = Vt[..., -1, :].reshape(-1, 3, 3)
    degenerate = S[..., 7] <= 1e-8 * S[..., 0]
    E = np.swapaxes(Tb, -1, -2) @ F @ Ta
    E = project_to_essential(E)
    E /= np.linalg.norm(E, axis=(-2, -1), keepdims=True)
    if single:
        return E[0], bool(degenerate[0])
    return E, degenerate


def fundamental_from_essential(E: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    Ki = K.K_inv
    return Ki.T @ E @ Ki


def symmetric_epipolar_distance(F: np.ndarray, uv1: np.ndarray, uv2: np.ndarray) -> np.ndarray:
    """Per-correspondence distance in pixels for one F (3, 3) or a batch (B, 3, 3)."""
    p1 = _homogeneous(np.asarray(uv1, dtype=float))
    p2 = _homogeneous(np.asarray(uv2, dtype=float))
    l2 = p1 @ np.swapaxes(F, -1, -2)  # epipolar lines in image 2: F p1
    l1 = p2 @ F  # lines in image 1: F^T p2
    num = np.einsum("...ij,ij->...i", l2, p2)
    n2 = l2[..., 0] ** 2 + l2[..., 1] ** 2
    n1 = l1[..., 0] ** 2 + l1[..., 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = 0.5 * num**2 * (1.0 / n1 + 1.0 / n2)
    return np.sqrt(np.where(np.isfinite(d2), d2, np.inf))


def _required_iterations(inlier_ratio: float, confidence: float, sample: int = 8) -> float:
    p = inlier_ratio**sample
    if p <= 0:
        return np.inf
    if p >= 1:
        return 0
    denom = np.log1p(-p)
    if denom == 0.0:
        return np.inf
    return np.log1p(-confidence) / denom


def estimate_essential_ransac(uv1, uv2, K: CameraIntrinsics, params: RansacParams = RansacParams(), rng=None):
    """Essential matrix relating two views, ``x2^T E x1 = 0``.

    Returns ``(E, inlier_mask)``. The best hypothesis is re-estimated on its
    inliers (once, then re-scored).
    """
    uv1 = np.asarray(uv1, dtype=float).reshape(-1, 2)
    uv2 = np.asarray(uv2, dtype=float).reshape(-1, 2)
    n = len(uv1)
    if n < 8:
        raise InsufficientCorrespondences(f"{n} correspondences, need at least 8")
    rng = np.random.default_rng(0) if rng is None else rng
    x1 = K.normalize(uv1)
    x2 = K.normalize(uv2)
    Ki = K.K_inv

    best_count, best_E, best_mask = -1, None, None
    done = 0
    needed = params.iterations
    while done < min(needed, params.iterations):
        b = min(params.batch, params.iterations - done)
        # 8 distinct indices per sample
        idx = np.argsort(rng.random((b, n)), axis=1)[:, :8]
        E, degenerate = eight_point(x1[idx], x2[idx])
        done += b
        E = E[~degenerate]
        if len(E) == 0:
            continue
        d = symmetric_epipolar_distance(Ki.T @ E @ Ki, uv1, uv2)
        masks = d < params.threshold_px
        counts = masks.sum(axis=1)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best_E, best_mask = int(counts[k]), E[k], masks[k]
            needed = _required_iterations(best_count / n, params.confidence)
    if best_E is None:
        raise DegenerateConfiguration("every sample was degenerate")

    if best_count >= 8:
        E_ref, degenerate = eight_point(x1[best_mask], x2[best_mask])
        if degenerate:
            raise DegenerateConfiguration("inliers do not constrain the epipolar geometry (no baseline?)")
        mask_ref = symmetric_epipolar_distance(fundamental_from_essential(E_ref, K), uv1, uv2) < params.threshold_px
        if mask_ref.sum() >= best_count:
            best_E, best_mask = E_ref, mask_ref
    if best_mask.mean() < params.min_inlier_ratio:
        raise DegenerateConfiguration(f"inlier ratio {best_mask.mean():.2f} below {params.min_inlier_ratio}")
    return best_E, best_mask


def decompose_essential(E: np.ndarray):
    """The four (R, t) candidates with unit ``t`` for ``x2 = R x1 + t``."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = U[:, 2]
    R1 = U @ W @ Vt
    R2 = U @ W.T @ Vt
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def recover_pose(E: np.ndarray, uv1, uv2, K: CameraIntrinsics, min_vote: float = 0.9):
    """Pick the decomposition of ``E`` that puts the points in front of both cameras.

    Returns the pose of camera 2 relative to camera 1 (``T_21``, unit
    translation) and the mask of points with positive depth under it.
    """
    uv1 = np.asarray(uv1, dtype=float).reshape(-1, 2)
    uv2 = np.asarray(uv2, dtype=float).reshape(-1, 2)
    if len(uv1) == 0:
        raise CheiralityAmbiguity("no correspondences to vote with")
    T1 = RigidTransform.identity()
    best = None
    for R, t in decompose_essential(E):
        T2 = RigidTransform.from_matrix(R, t)
        _, ok = triangulate_points(T1, T2, uv1, uv2, K)
        if best is None or ok.sum() > best[2].sum():
            best = (R, t, ok)
    R, t, ok = best
    if ok.mean() <= min_vote:
        raise CheiralityAmbiguity(f"best decomposition has only {ok.mean():.0%} points in front")
    return RigidTransform.from_matrix(R, t), ok


def essential_from_pose(T_21: RigidTransform) -> np.ndarray:
    return skew(T_21.t) @ T_21.R
