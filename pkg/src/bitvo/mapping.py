"""Map storage, keyframe selection and structure-only bundle adjustment."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .geometry import CameraIntrinsics, RigidTransform
from .lm import LAMBDA_DOWN, LAMBDA_INIT, LAMBDA_UP, HuberLoss
from .tracking import most_descriptive


@dataclass(frozen=True)
class VOConfig:
    min_disparity_px: float = 20.0
    min_parallax_deg: float = 5.0
    min_init_points: int = 100
    kf_min_frame_gap: int = 200
    kf_min_tracked: int = 50
    kf_depth_ratio: float = 0.12
    kf_bruteforce_below: int = 30
    huber_delta_px: float = 2.0
    max_lm_iters: int = 10
    ba_iters: int = 10
    ransac_iterations: int = 500
    ransac_threshold_px: float = 2.0
    ransac_confidence: float = 0.99
    epipolar_threshold_px: float = 2.0
    min_tracking_inliers: int = 15
    # frames to wait after a failed initialisation attempt
    init_retry_gap: int = 10
    # tracker settings used for initialisation and keyframe triangulation
    track_memory: int = 8
    track_grace: int = 10
    # recent matched descriptors kept per map point for map-to-frame matching
    point_memory: int = 8
    # points created at keyframes stay candidates, excluded from pose
    # estimation, until this many frames reproject them within the Huber
    # threshold; candidates not confirmed within the window are removed
    point_confirm_hits: int = 10
    point_confirm_window: int = 100
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "seed":
                continue
            if f.name in ("init_retry_gap", "track_grace", "point_memory", "point_confirm_hits"):
                if v < 0:
                    raise ValueError(f"{f.name} must be non-negative")
            elif not v > 0:
                raise ValueError(f"{f.name} must be positive")


def should_insert_keyframe(frame_gap: int, tracked: int, kf_distances, median_depth: float, cfg: VOConfig) -> bool:
    """Keyframe predicate: enough frames, enough tracked features, far from every keyframe."""
    if frame_gap < cfg.kf_min_frame_gap or tracked < cfg.kf_min_tracked:
        return False
    d = np.asarray(kf_distances, dtype=float)
    if d.size == 0:
        return True
    return bool(d.min() > cfg.kf_depth_ratio * median_depth)


# ---------------------------------------------------------------------------
# map containers
# ---------------------------------------------------------------------------


@dataclass
class Keyframe:
    id: int
    pose: RigidTransform  # T_cw
    positions: np.ndarray  # (M, 2) corner pixels
    descriptors: np.ndarray  # (M,) uint64
    frame_index: int
    track_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


@dataclass
class MapPoint:
    id: int
    position: np.ndarray
    observations: list  # (keyframe_id, uv, descriptor)
    representative_descriptor: int


class Map:
    """Landmarks and keyframes, stored as flat arrays.

    Besides its keyframe observations every point may keep a short memory of
    the descriptors it was most recently matched to (``recent_size`` columns,
    newest first). Points are either confirmed or candidates; candidates
    count the frames that agreed (``hits``) or disagreed (``misses``) with
    them since the frame they were created in (``born``).
    """

    def __init__(self, recent_size: int = 0):
        self.point_ids = np.zeros(0, dtype=np.int64)
        self.positions = np.zeros((0, 3))
        self.representative = np.zeros(0, dtype=np.uint64)
        self.recent = np.zeros((0, recent_size), dtype=np.uint64)
        self.confirmed = np.zeros(0, dtype=bool)
        self.hits = np.zeros(0, dtype=np.int64)
        self.misses = np.zeros(0, dtype=np.int64)
        self.born = np.zeros(0, dtype=np.int64)
        self.obs_pid = np.zeros(0, dtype=np.int64)
        self.obs_kf = np.zeros(0, dtype=np.int64)
        self.obs_uv = np.zeros((0, 2))
        self.obs_desc = np.zeros(0, dtype=np.uint64)
        self.keyframes: list[Keyframe] = []
        self.next_point_id = 0

    def __len__(self) -> int:
        return len(self.point_ids)

    def add_keyframe(self, pose: RigidTransform, positions, descriptors, frame_index: int, track_ids=None) -> Keyframe:
        kf = Keyframe(
            id=len(self.keyframes),
            pose=pose,
            positions=np.asarray(positions, dtype=float).reshape(-1, 2),
            descriptors=np.asarray(descriptors, dtype=np.uint64),
            frame_index=frame_index,
            track_ids=np.zeros(0, dtype=np.int64) if track_ids is None else np.asarray(track_ids, dtype=np.int64),
        )
        self.keyframes.append(kf)
        return kf

    def rows_of(self, point_ids) -> np.ndarray:
        # ids are assigned in increasing order and never reordered
        point_ids = np.asarray(point_ids, dtype=np.int64)
        rows = np.searchsorted(self.point_ids, point_ids)
        rows = np.clip(rows, 0, max(len(self.point_ids) - 1, 0))
        if len(self.point_ids) == 0:
            return np.full(len(point_ids), -1)
        return np.where(self.point_ids[rows] == point_ids, rows, -1)

    def add_points(
        self, positions, kf_a: int, uv_a, desc_a, kf_b: int, uv_b, desc_b, confirmed: bool = True, born: int = 0
    ) -> np.ndarray:
        """New points observed by two keyframes; returns their ids."""
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        n = len(positions)
        ids = np.arange(self.next_point_id, self.next_point_id + n, dtype=np.int64)
        self.next_point_id += n
        self.point_ids = np.concatenate([self.point_ids, ids])
        self.positions = np.concatenate([self.positions, positions])
        desc_a = np.asarray(desc_a, dtype=np.uint64)
        self.representative = np.concatenate([self.representative, desc_a])
        desc_b = np.asarray(desc_b, dtype=np.uint64)
        self.recent = np.concatenate([self.recent, np.repeat(desc_b[:, None], self.recent.shape[1], axis=1)])
        self.confirmed = np.concatenate([self.confirmed, np.full(n, confirmed)])
        self.hits = np.concatenate([self.hits, np.zeros(n, dtype=np.int64)])
        self.misses = np.concatenate([self.misses, np.zeros(n, dtype=np.int64)])
        self.born = np.concatenate([self.born, np.full(n, born, dtype=np.int64)])
        self.add_observations(ids, kf_a, uv_a, desc_a, update=False)
        self.add_observations(ids, kf_b, uv_b, desc_b, update=False)
        return ids

    def add_observations(self, point_ids, kf_id: int, uv, desc, update: bool = True) -> None:
        point_ids = np.asarray(point_ids, dtype=np.int64)
        # at most one observation per keyframe and point
        seen = self.obs_pid[self.obs_kf == kf_id]
        fresh = ~np.isin(point_ids, seen)
        point_ids = point_ids[fresh]
        self.obs_pid = np.concatenate([self.obs_pid, point_ids])
        self.obs_kf = np.concatenate([self.obs_kf, np.full(len(point_ids), kf_id, dtype=np.int64)])
        self.obs_uv = np.concatenate([self.obs_uv, np.asarray(uv, dtype=float).reshape(-1, 2)[fresh]])
        self.obs_desc = np.concatenate([self.obs_desc, np.asarray(desc, dtype=np.uint64)[fresh]])
        if update:
            self.update_representatives(point_ids)

    def update_representatives(self, point_ids) -> None:
        point_ids = np.asarray(point_ids, dtype=np.int64)
        if len(point_ids) == 0:
            return
        order = np.argsort(self.obs_pid, kind="stable")
        sorted_pid = self.obs_pid[order]
        lo = np.searchsorted(sorted_pid, point_ids, side="left")
        hi = np.searchsorted(sorted_pid, point_ids, side="right")
        rows = self.rows_of(point_ids)
        for row, a, b in zip(rows, lo, hi):
            if row >= 0 and b > a:
                self.representative[row] = most_descriptive(self.obs_desc[order[a:b]])

    def remember(self, point_ids, descriptors) -> None:
        """Push freshly matched descriptors into the points' recent memory."""
        if self.recent.shape[1] == 0 or len(point_ids) == 0:
            return
        rows = self.rows_of(point_ids)
        ok = rows >= 0
        rows = rows[ok]
        self.recent[rows, 1:] = self.recent[rows, :-1]
        self.recent[rows, 0] = np.asarray(descriptors, dtype=np.uint64)[ok]

    def vote(self, point_ids, agree, frame_index: int, cfg: "VOConfig") -> np.ndarray:
        """Record which candidates agreed with a frame; returns removed ids.

        A candidate is confirmed after ``cfg.point_confirm_hits`` agreeing
        frames, and removed once it disagrees more often than it agrees or
        outlives ``cfg.point_confirm_window`` frames unconfirmed.
        """
        rows = self.rows_of(point_ids)
        ok = rows >= 0
        rows, agree = rows[ok], np.asarray(agree, dtype=bool)[ok]
        cand = ~self.confirmed[rows]
        np.add.at(self.hits, rows[cand & agree], 1)
        np.add.at(self.misses, rows[cand & ~agree], 1)
        self.confirmed |= self.hits >= cfg.point_confirm_hits
        stale = ~self.confirmed & (
            (self.misses > self.hits + 2) | (frame_index - self.born > cfg.point_confirm_window)
        )
        gone = self.point_ids[stale].copy()
        if len(gone):
            self.remove_points(gone)
        return gone

    def matching_descriptors(self) -> np.ndarray:
        """(P, 1 + recent) descriptors each point is matched with."""
        if self.recent.shape[1] == 0:
            return self.representative
        return np.concatenate([self.representative[:, None], self.recent], axis=1)

    def remove_points(self, point_ids) -> None:
        drop = np.isin(self.point_ids, point_ids)
        self.point_ids = self.point_ids[~drop]
        self.positions = self.positions[~drop]
        self.representative = self.representative[~drop]
        self.recent = self.recent[~drop]
        self.confirmed = self.confirmed[~drop]
        self.hits = self.hits[~drop]
        self.misses = self.misses[~drop]
        self.born = self.born[~drop]
        keep_obs = ~np.isin(self.obs_pid, point_ids)
        self.obs_pid = self.obs_pid[keep_obs]
        self.obs_kf = self.obs_kf[keep_obs]
        self.obs_uv = self.obs_uv[keep_obs]
        self.obs_desc = self.obs_desc[keep_obs]

    def point(self, point_id: int) -> MapPoint:
        row = int(self.rows_of([point_id])[0])
        if row < 0:
            raise KeyError(point_id)
        sel = np.flatnonzero(self.obs_pid == point_id)
        obs = [(int(self.obs_kf[i]), self.obs_uv[i].copy(), int(self.obs_desc[i])) for i in sel]
        return MapPoint(int(point_id), self.positions[row].copy(), obs, int(self.representative[row]))

    def keyframe_centers(self) -> np.ndarray:
        if not self.keyframes:
            return np.zeros((0, 3))
        return np.array([kf.pose.center() for kf in self.keyframes])

    def snapshot(self) -> "Map":
        """Independent copy, safe to hand to another thread or process."""
        other = Map()
        for name in (
            "point_ids", "positions", "representative", "recent", "confirmed", "hits", "misses", "born",
            "obs_pid", "obs_kf", "obs_uv", "obs_desc",
        ):
            setattr(other, name, getattr(self, name).copy())
        other.keyframes = list(self.keyframes)
        other.next_point_id = self.next_point_id
        return other


# ---------------------------------------------------------------------------
# structure-only bundle adjustment
# ---------------------------------------------------------------------------


def _point_residuals(X, obs_row, R, t, uv, K: CameraIntrinsics):
    P = np.einsum("oij,oj->oi", R, X[obs_row]) + t
    zi = 1.0 / P[:, 2]
    r = np.empty((len(P), 2))
    r[:, 0] = K.fx * P[:, 0] * zi + K.cx - uv[:, 0]
    r[:, 1] = K.fy * P[:, 1] * zi + K.cy - uv[:, 1]
    return r, P, zi


def refine_points(
    X0: np.ndarray,
    obs_row: np.ndarray,
    R: np.ndarray,
    t: np.ndarray,
    uv: np.ndarray,
    K: CameraIntrinsics,
    loss: HuberLoss,
    max_iters: int = 10,
):
    """Independent robust LM for every point with camera poses held fixed.

    ``obs_row`` maps each observation to a row of ``X0``; ``R``, ``t`` are
    the observing camera's ``T_cw`` per observation. Every point keeps its
    own damping and accepts a step only when its own robust cost drops.
    Returns ``(X, residual_norms, cost_before, cost_after)``.
    """
    X = np.array(X0, dtype=float, copy=True)
    n = len(X)

    def costs(Xc):
        r, P, zi = _point_residuals(Xc, obs_row, R, t, uv, K)
        s = (r * r).sum(axis=1)
        c = 0.5 * np.bincount(obs_row, weights=loss.rho(s), minlength=n)
        # a point behind any observing camera is not an improvement
        bad = np.bincount(obs_row, weights=(P[:, 2] <= 0).astype(float), minlength=n) > 0
        c[bad] = np.inf
        return c, r, s, P, zi

    cost, r, s, P, zi = costs(X)
    cost_before = cost.copy()
    lam = np.full(n, LAMBDA_INIT)
    active = np.isfinite(cost) & (cost > 0)
    for _ in range(max_iters):
        if not active.any():
            break
        # d(pi)/d(p_c) @ R for every observation
        A = np.zeros((len(P), 2, 3))
        A[:, 0, 0] = K.fx * zi
        A[:, 0, 2] = -K.fx * P[:, 0] * zi * zi
        A[:, 1, 1] = K.fy * zi
        A[:, 1, 2] = -K.fy * P[:, 1] * zi * zi
        J = A @ R
        w = loss.weight(s)
        H = np.zeros((n, 3, 3))
        g = np.zeros((n, 3))
        np.add.at(H, obs_row, w[:, None, None] * np.einsum("oki,okj->oij", J, J))
        np.add.at(g, obs_row, w[:, None] * np.einsum("oki,ok->oi", J, r))
        d = np.maximum(np.diagonal(H, axis1=1, axis2=2), 1e-12)
        Hd = H + (lam[:, None] * d)[:, :, None] * np.eye(3)
        try:
            dx = np.linalg.solve(Hd[active], -g[active][..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        X_try = X.copy()
        X_try[active] = X[active] + dx
        cost_try, r_try, s_try, P_try, zi_try = costs(X_try)
        better = active & (cost_try < cost)
        worse = active & ~better
        X[better] = X_try[better]
        step = np.zeros(n)
        step[active] = np.linalg.norm(dx, axis=1)
        small = step < 1e-12
        rel = np.zeros(n)
        rel[better] = (cost[better] - cost_try[better]) / np.maximum(cost[better], 1e-300)
        cost[better] = cost_try[better]
        lam[better] /= LAMBDA_DOWN
        lam[worse] *= LAMBDA_UP
        # refresh per-observation quantities of accepted points
        obs_better = better[obs_row]
        r[obs_better] = r_try[obs_better]
        s[obs_better] = s_try[obs_better]
        P[obs_better] = P_try[obs_better]
        zi[obs_better] = zi_try[obs_better]
        active &= ~(small | (better & (rel < 1e-10)) | (cost == 0) | (lam > 1e12))
    norms = np.sqrt(s)
    return X, norms, cost_before, cost


def structure_only_ba(world_map: Map, K: CameraIntrinsics, cfg: VOConfig) -> int:
    """Refine every map point with keyframe poses fixed, then prune.

    Points with any observation residual above the Huber constant are
    removed. Returns the number of pruned points.
    """
    if len(world_map) == 0:
        return 0
    kf_R = np.array([kf.pose.R for kf in world_map.keyframes])
    kf_t = np.array([kf.pose.t for kf in world_map.keyframes])
    obs_row = world_map.rows_of(world_map.obs_pid)
    X, norms, _, _ = refine_points(
        world_map.positions,
        obs_row,
        kf_R[world_map.obs_kf],
        kf_t[world_map.obs_kf],
        world_map.obs_uv,
        K,
        HuberLoss(cfg.huber_delta_px),
        cfg.ba_iters,
    )
    world_map.positions = X
    bad_obs = ~(norms <= cfg.huber_delta_px)
    bad = np.unique(world_map.obs_pid[bad_obs])
    world_map.remove_points(bad)
    return len(bad)
