"""Trajectory association, similarity alignment and absolute trajectory error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, NoOverlap
from .geometry import euler_zyx_degrees
from .trajectory import Trajectory


@dataclass
class ATEStats:
    rmse: float
    median: float
    length: float
    count: int = 0

    def as_dict(self) -> dict:
        return {"length_m": self.length, "rmse_m": self.rmse, "median_m": self.median}


@dataclass
class PairedPoses:
    """Associated estimate/ground-truth samples (estimate index, gt index)."""

    est_index: np.ndarray
    gt_index: np.ndarray
    est: Trajectory
    gt: Trajectory

    def __len__(self) -> int:
        return len(self.est_index)

    def est_positions(self) -> np.ndarray:
        return self.est.positions()[self.est_index]

    def gt_positions(self) -> np.ndarray:
        return self.gt.positions()[self.gt_index]

    def times(self) -> np.ndarray:
        return self.gt.times()[self.gt_index]


def associate(est: Trajectory, gt: Trajectory, max_dt: float = 0.002) -> PairedPoses:
    """Pair each ground-truth sample with its nearest estimate within ``max_dt``.

    Candidate pairs are taken in order of increasing time offset and each
    sample on either side is used at most once.
    """
    if len(est) == 0 or len(gt) == 0:
        raise NoOverlap("empty trajectory")
    te, tg = est.times(), gt.times()
    # nearest estimate on each side of every gt sample
    pos = np.searchsorted(te, tg)
    cand_g = np.concatenate([np.arange(len(tg)), np.arange(len(tg))])
    cand_e = np.concatenate([pos - 1, pos])
    valid = (cand_e >= 0) & (cand_e < len(te))
    cand_g, cand_e = cand_g[valid], cand_e[valid]
    dt = np.abs(te[cand_e] - tg[cand_g])
    keep = dt <= max_dt
    cand_g, cand_e, dt = cand_g[keep], cand_e[keep], dt[keep]
    order = np.lexsort((cand_e, cand_g, dt))
    used_e = np.zeros(len(te), dtype=bool)
    used_g = np.zeros(len(tg), dtype=bool)
    pe, pg = [], []
    for k in order:
        e, g = cand_e[k], cand_g[k]
        if not used_e[e] and not used_g[g]:
            used_e[e] = used_g[g] = True
            pe.append(e)
            pg.append(g)
    if not pe:
        raise NoOverlap("no timestamps within tolerance")
    srt = np.argsort(pg)
    return PairedPoses(np.asarray(pe)[srt], np.asarray(pg)[srt], est, gt)


def umeyama_sim3(src: np.ndarray, dst: np.ndarray):
    """Similarity ``(s, R, t)`` minimising ``sum |dst - (s R src + t)|^2``."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if len(src) < 3:
        raise DegenerateGeometry(f"{len(src)} pairs, need at least 3")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - mu_s, dst - mu_d
    var_s = (a * a).sum() / len(src)
    cov = b.T @ a / len(src)
    U, S, Vt = np.linalg.svd(cov)
    scale_ref = max(S[0], 1e-300)
    # rank < 2 of either point set leaves a rotation free
    for P in (a, b):
        sv = np.linalg.svd(P, compute_uv=False)
        if sv[0] <= 1e-12 or sv[1] <= 1e-9 * sv[0]:
            raise DegenerateGeometry("points are collinear or coincident")
    if S[1] <= 1e-12 * scale_ref:
        raise DegenerateGeometry("points are collinear or coincident")
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    s = float(np.trace(np.diag(S) @ D) / var_s)
    t = mu_d - s * R @ mu_s
    return s, R, t


def align_umeyama_sim3(pairs: PairedPoses):
    return umeyama_sim3(pairs.est_positions(), pairs.gt_positions())


def apply_sim3(alignment, points: np.ndarray) -> np.ndarray:
    s, R, t = alignment
    return s * np.asarray(points, dtype=float) @ R.T + t


def compute_ate(pairs: PairedPoses, alignment=None) -> ATEStats:
    """Translational error statistics; ``alignment=None`` compares raw positions."""
    est = pairs.est_positions()
    if alignment is not None:
        est = apply_sim3(alignment, est)
    err = np.linalg.norm(pairs.gt_positions() - est, axis=1)
    return ATEStats(
        rmse=float(np.sqrt(np.mean(err**2))),
        median=float(np.median(err)),
        length=pairs.gt.length(),
        count=len(err),
    )


def euler_traces(pairs: PairedPoses, alignment=None):
    """Per-pair ZYX Euler angles in degrees of estimate and ground truth.

    The estimated rotations are mapped into the ground-truth frame by the
    rotation part of ``alignment``. Returns ``(est_deg, gt_deg)``, both
    (N, 3) columns (x, y, z), unwrapped to be continuous.
    """
    Re = pairs.est.rotations()[pairs.est_index]
    Rg = pairs.gt.rotations()[pairs.gt_index]
    if alignment is not None:
        Re = alignment[1] @ Re
    e = np.array([euler_zyx_degrees(R) for R in Re])
    g = np.array([euler_zyx_degrees(R) for R in Rg])
    e = np.degrees(np.unwrap(np.radians(e), axis=0))
    g = np.degrees(np.unwrap(np.radians(g), axis=0))
    # put both traces on the same branch
    e -= 360.0 * np.round((e - g) / 360.0)
    return e, g


def orientation_rmse(pairs: PairedPoses, alignment) -> np.ndarray:
    """Per-axis RMSE in degrees between aligned Euler traces."""
    e, g = euler_traces(pairs, alignment)
    return np.sqrt(np.mean((e - g) ** 2, axis=0))
