"""Monocular odometry loop: bootstrap, per-frame tracking and keyframes.

Poses are kept as ``T_cw`` internally; :class:`FrameResult` also exposes the
camera-to-world pose for trajectory output. The first keyframe defines the
world frame and the initial map is scaled to unit median depth.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .epipolar import (
    RansacParams,
    estimate_essential_ransac,
    fundamental_from_essential,
    essential_from_pose,
    recover_pose,
    symmetric_epipolar_distance,
)
from .errors import BitVOError, NotReady
from .frame import FeatureFrame
from .geometry import CameraIntrinsics, RigidTransform, parallax_degrees_many, project_points, triangulate_points
from .mapping import Map, VOConfig, should_insert_keyframe, structure_only_ba
from .pose import estimate_pose
from .tracking import (
    DescribedCorners,
    MatchParams,
    TrackTable,
    describe_frame,
    match_descriptors,
    match_frame_to_frame,
    match_map_to_frame,
)
from .descriptor import hamming_many


@dataclass
class Initialization:
    pose: RigidTransform  # T_cw of the second view, first view is identity
    points: np.ndarray  # (N, 3) world points, unit median depth
    mask: np.ndarray  # which input correspondences produced a point


def triangulate_filtered(T_a, T_b, uv_a, uv_b, K: CameraIntrinsics, min_parallax_deg: float, max_reproj_px: float):
    """Triangulate and keep points in front of both cameras, with enough
    parallax and a small reprojection error in both views."""
    X, ok = triangulate_points(T_a, T_b, uv_a, uv_b, K)
    if not ok.any():
        return X, ok
    par = parallax_degrees_many(T_a.center(), T_b.center(), np.where(ok[:, None], X, 0.0))
    ok &= par >= min_parallax_deg
    for T, uv in ((T_a, uv_a), (T_b, uv_b)):
        proj, _ = project_points(K, T.transform_point(np.where(ok[:, None], X, 0.0)))
        with np.errstate(invalid="ignore"):
            ok &= np.linalg.norm(proj - uv, axis=1) <= max_reproj_px
    return X, ok


def try_initialize(uv_ref, uv_cur, K: CameraIntrinsics, cfg: VOConfig, rng=None) -> Initialization:
    """Two-view bootstrap from tracked features; raises NotReady on any failure."""
    uv_ref = np.asarray(uv_ref, dtype=float).reshape(-1, 2)
    uv_cur = np.asarray(uv_cur, dtype=float).reshape(-1, 2)
    if len(uv_ref) == 0:
        raise NotReady("no tracked features")
    disparity = float(np.median(np.linalg.norm(uv_cur - uv_ref, axis=1)))
    if disparity <= cfg.min_disparity_px:
        raise NotReady(f"median disparity {disparity:.1f}px is not above {cfg.min_disparity_px}px")
    params = RansacParams(cfg.ransac_iterations, cfg.ransac_threshold_px, cfg.ransac_confidence)
    try:
        E, inl = estimate_essential_ransac(uv_ref, uv_cur, K, params, rng)
        T, _ = recover_pose(E, uv_ref[inl], uv_cur[inl], K)
        X, ok = triangulate_filtered(
            RigidTransform.identity(), T, uv_ref, uv_cur, K, cfg.min_parallax_deg, cfg.ransac_threshold_px
        )
    except BitVOError as exc:
        raise NotReady(str(exc)) from exc
    ok &= inl
    if ok.sum() <= cfg.min_init_points:
        raise NotReady(f"only {int(ok.sum())} points survive triangulation")
    scale = 1.0 / float(np.median(X[ok, 2]))
    return Initialization(pose=RigidTransform(T.rotation, T.t * scale), points=X * scale, mask=ok)


@dataclass
class FrameResult:
    index: int
    timestamp: float
    pose_cw: RigidTransform | None
    status: str  # "initializing", "initialized", "tracking", "lost"
    inliers: int = 0
    keyframe: bool = False
    seconds: float = 0.0

    @property
    def pose_wc(self) -> RigidTransform | None:
        return None if self.pose_cw is None else self.pose_cw.inverse()


@dataclass
class VOStats:
    frames: int = 0
    keyframes: int = 0
    lost: int = 0
    init_frame: int = -1
    init_attempts: int = 0
    bruteforce_insertions: int = 0
    frame_seconds: list = field(default_factory=list)


BIG = np.iinfo(np.int64).max // 2


def _unique_mutual_best(cost: np.ndarray):
    """(row, col) pairs that are the strict minimum of both their row and column."""
    if cost.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    a = np.arange(cost.shape[0])
    b = np.argmin(cost, axis=1)
    best = cost[a, b]
    ok = best < BIG
    # strictly better than the runner-up in the row ...
    if cost.shape[1] > 1:
        second = np.partition(cost, 1, axis=1)[:, 1]
        ok &= best < second
    # ... and in the column
    col_best = cost.min(axis=0)
    col_count = (cost == col_best[None]).sum(axis=0)
    ok &= (col_best[b] == best) & (col_count[b] == 1)
    return a[ok], b[ok]


_WARM = False


def _warm_kernels(K: CameraIntrinsics) -> None:
    """Run the compiled kernels once so JIT time never lands in a frame."""
    global _WARM
    if _WARM:
        return
    xy = np.array([[10.0, 10.0], [20.0, 20.0]])
    corners = DescribedCorners(xy, np.array([1, 2], dtype=np.uint64), np.arange(2))
    match_descriptors(xy, np.array([1, 2], dtype=np.uint64), corners, 3.0, 5)
    P = np.array([[0.1, 0.0, 2.0], [-0.1, 0.2, 2.5], [0.0, -0.2, 3.0], [0.3, 0.1, 2.2]])
    uv, _ = project_points(K, P)
    estimate_pose(P, uv, RigidTransform.identity(), K)
    _WARM = True


class VisualOdometry:
    def __init__(self, K: CameraIntrinsics | None = None, cfg: VOConfig | None = None, match: MatchParams | None = None):
        self.K = K or CameraIntrinsics()
        self.cfg = cfg or VOConfig()
        self.match = match or MatchParams()
        self.track_params = MatchParams(
            self.match.search_radius, self.match.max_hamming, self.cfg.track_grace, self.cfg.track_memory
        )
        self.map = Map(self.cfg.point_memory)
        self.tracks = TrackTable()
        self.stats = VOStats()
        self.rng = np.random.default_rng(self.cfg.seed)
        self.T_cw: RigidTransform | None = None
        self.frame_index = -1
        self._ref = None
        self._next_attempt = 0
        self._last_kf_frame = 0
        _warm_kernels(self.K)

    @property
    def initialized(self) -> bool:
        return self.T_cw is not None

    def process(self, frame: FeatureFrame) -> FrameResult:
        t0 = time.perf_counter()
        self.frame_index += 1
        idx = self.frame_index
        corners = describe_frame(frame)
        update = match_frame_to_frame(self.tracks, corners, self.track_params, idx)
        corner_track = update.corner_to_track(len(corners))
        if not self.initialized:
            result = self._bootstrap(frame, corners, corner_track)
        else:
            result = self._track(frame, corners, corner_track, update)
        result.seconds = time.perf_counter() - t0
        self.stats.frames += 1
        self.stats.frame_seconds.append(result.seconds)
        return result

    # -- initialisation ----------------------------------------------------

    def _latch_reference(self, corners: DescribedCorners, corner_track: np.ndarray):
        self._ref = (self.frame_index, corner_track.copy(), corners.positions.copy(), corners.descriptors.copy())

    def _bootstrap(self, frame, corners, corner_track) -> FrameResult:
        idx = self.frame_index
        res = FrameResult(idx, frame.timestamp, None, "initializing")
        if self._ref is None:
            self._latch_reference(corners, corner_track)
            return res
        ref_idx, ref_tracks, ref_pos, ref_desc = self._ref
        rows = self.tracks.index_of(ref_tracks)
        alive = rows >= 0
        alive[alive] = self.tracks.last_seen[rows[alive]] == idx
        if alive.sum() <= self.cfg.min_init_points:
            self._latch_reference(corners, corner_track)
            return res
        if idx < self._next_attempt:
            return res
        uv_ref = ref_pos[alive]
        uv_cur = self.tracks.positions[rows[alive]]
        if np.median(np.linalg.norm(uv_cur - uv_ref, axis=1)) <= self.cfg.min_disparity_px:
            return res
        self.stats.init_attempts += 1
        try:
            init = try_initialize(uv_ref, uv_cur, self.K, self.cfg, self.rng)
        except NotReady:
            self._next_attempt = idx + self.cfg.init_retry_gap
            return res

        # keyframe 0 is the reference view, keyframe 1 the current one
        kf0 = self.map.add_keyframe(RigidTransform.identity(), ref_pos, ref_desc, ref_idx, ref_tracks)
        kf1 = self.map.add_keyframe(init.pose, corners.positions, corners.descriptors, idx, corner_track)
        sel = np.flatnonzero(alive)[init.mask]
        cur_rows = rows[sel]
        cur_corner = self._corner_of_tracks(self.tracks.ids[cur_rows], corner_track)
        ids = self.map.add_points(
            init.points[init.mask],
            kf0.id,
            ref_pos[sel],
            ref_desc[sel],
            kf1.id,
            corners.positions[cur_corner],
            corners.descriptors[cur_corner],
        )
        self.map.update_representatives(ids)
        self.tracks.set_tag(ref_tracks[sel], ids)
        structure_only_ba(self.map, self.K, self.cfg)
        self.T_cw = init.pose
        self._last_kf_frame = idx
        self.stats.init_frame = idx
        self.stats.keyframes = 2
        res.pose_cw = self.T_cw
        res.status = "initialized"
        res.keyframe = True
        return res

    @staticmethod
    def _corner_of_tracks(track_ids: np.ndarray, corner_track: np.ndarray) -> np.ndarray:
        order = np.argsort(corner_track)
        pos = np.searchsorted(corner_track, track_ids, sorter=order)
        return order[np.clip(pos, 0, len(order) - 1)]

    # -- tracking ----------------------------------------------------------

    def _match_map(self, T: RigidTransform, corners: DescribedCorners):
        m = self.map
        return match_map_to_frame(m.point_ids, m.positions, m.matching_descriptors(), T, self.K, corners, self.match)

    def _correspondences(self, corners: DescribedCorners, update):
        """Map matches by back-projection, completed by tracks linked to points.

        Back-projection wins when both sources disagree about a point or a
        corner.
        """
        pids, cj, _ = self._match_map(self.T_cw, corners)
        linked = update.continued_tag >= 0
        lp, lc = update.continued_tag[linked], update.continued_corner[linked]
        keep = (self.map.rows_of(lp) >= 0) & ~np.isin(lp, pids) & ~np.isin(lc, cj)
        n_bp = len(pids)
        return np.concatenate([pids, lp[keep]]), np.concatenate([cj, lc[keep]]), n_bp

    def _track(self, frame, corners, corner_track, update) -> FrameResult:
        idx = self.frame_index
        cfg = self.cfg
        res = FrameResult(idx, frame.timestamp, self.T_cw, "tracking")
        pids, cj, _ = self._correspondences(corners, update)
        rows = self.map.rows_of(pids)
        # the pose comes from confirmed points when there are enough of them
        use = self.map.confirmed[rows]
        if use.sum() < cfg.min_tracking_inliers:
            use[:] = True
        try:
            T, inl_used, _ = estimate_pose(
                self.map.positions[rows[use]], corners.positions[cj[use]], self.T_cw, self.K, cfg.huber_delta_px, cfg.max_lm_iters
            )
        except BitVOError:
            T = None
        n_inl = int(inl_used.sum()) if T is not None else 0
        res.inliers = n_inl
        if T is None or n_inl < cfg.min_tracking_inliers:
            # hold the last pose and retry against it next frame
            self.stats.lost += 1
            res.status = "lost"
            return res
        proj, front = project_points(self.K, T.transform_point(self.map.positions[rows]))
        with np.errstate(invalid="ignore"):
            inl = front & (np.linalg.norm(proj - corners.positions[cj], axis=1) <= cfg.huber_delta_px)
        inl[use] = inl_used
        gone = self.map.vote(pids, inl, idx, cfg)
        if len(gone):
            keep = ~np.isin(pids, gone)
            pids, cj, inl = pids[keep], cj[keep], inl[keep]
            self.tracks.tag[np.isin(self.tracks.tag, gone)] = -1
        rows = self.map.rows_of(pids)
        # inliers (re)link their track to the point, outliers lose the link
        self.tracks.set_tag(corner_track[cj], np.where(inl, pids, -1))
        self.map.remember(pids[inl], corners.descriptors[cj[inl]])
        self.T_cw = T
        res.pose_cw = T
        depth = self.map.positions[rows[inl]] @ T.R[2] + T.t[2]
        median_depth = float(np.median(depth))
        dists = np.linalg.norm(self.map.keyframe_centers() - T.center(), axis=1)
        tracked = len(update.continued)
        if should_insert_keyframe(idx - self._last_kf_frame, tracked, dists, median_depth, cfg):
            self.insert_keyframe(corners, corner_track)
            res.keyframe = True
        return res

    # -- keyframes ---------------------------------------------------------

    def insert_keyframe(self, corners: DescribedCorners, corner_track: np.ndarray) -> int:
        """Register the current frame as a keyframe and grow the map.

        Returns the number of new map points.
        """
        cfg, K, m = self.cfg, self.K, self.map
        idx = self.frame_index
        prev = m.keyframes[-1]
        kf = m.add_keyframe(self.T_cw, corners.positions, corners.descriptors, idx, corner_track)
        self._last_kf_frame = idx
        self.stats.keyframes += 1

        # back-projection links existing points to this keyframe
        pids, cj, _ = self._match_map(self.T_cw, corners)
        rows = m.rows_of(pids)
        proj, _ = project_points(K, self.T_cw.transform_point(m.positions[rows]))
        good = np.linalg.norm(proj - corners.positions[cj], axis=1) <= cfg.huber_delta_px
        pids, cj = pids[good], cj[good]
        m.add_observations(pids, kf.id, corners.positions[cj], corners.descriptors[cj])
        self.tracks.set_tag(corner_track[cj], pids)

        # untriangulated features tracked since the previous keyframe
        used_cur = np.zeros(len(corners), dtype=bool)
        used_cur[cj] = True
        rows = self.tracks.index_of(corner_track)
        free = ~used_cur & (rows >= 0)
        free[free] = self.tracks.tag[rows[free]] < 0
        order = np.argsort(prev.track_ids)
        pos = np.clip(np.searchsorted(prev.track_ids, corner_track, sorter=order), 0, max(len(order) - 1, 0))
        in_prev = free & (len(order) > 0)
        if len(order):
            in_prev &= prev.track_ids[order[pos]] == corner_track
        cur_idx = np.flatnonzero(in_prev)
        prev_idx = order[pos[cur_idx]] if len(order) else np.zeros(0, dtype=np.int64)
        F = fundamental_from_essential(essential_from_pose(self.T_cw.compose(prev.pose.inverse())), K)
        if len(cur_idx):
            ok = symmetric_epipolar_distance(F, prev.positions[prev_idx], corners.positions[cur_idx]) < cfg.epipolar_threshold_px
            cur_idx, prev_idx = cur_idx[ok], prev_idx[ok]

        if len(cur_idx) < cfg.kf_bruteforce_below:
            self.stats.bruteforce_insertions += 1
            bc, bp = self._bruteforce(prev, corners, used_cur, F)
            taken_c = np.isin(bc, cur_idx)
            taken_p = np.isin(bp, prev_idx)
            keep = ~(taken_c | taken_p)
            cur_idx = np.concatenate([cur_idx, bc[keep]])
            prev_idx = np.concatenate([prev_idx, bp[keep]])

        n_new = 0
        if len(cur_idx):
            X, ok = triangulate_filtered(
                prev.pose,
                self.T_cw,
                prev.positions[prev_idx],
                corners.positions[cur_idx],
                K,
                cfg.min_parallax_deg,
                cfg.huber_delta_px,
            )
            if ok.any():
                ids = m.add_points(
                    X[ok],
                    prev.id,
                    prev.positions[prev_idx[ok]],
                    prev.descriptors[prev_idx[ok]],
                    kf.id,
                    corners.positions[cur_idx[ok]],
                    corners.descriptors[cur_idx[ok]],
                    confirmed=False,
                    born=idx,
                )
                m.update_representatives(ids)
                self.tracks.set_tag(corner_track[cur_idx[ok]], ids)
                n_new = len(ids)
        structure_only_ba(m, K, cfg)
        return n_new

    def _bruteforce(self, prev, corners: DescribedCorners, used_cur: np.ndarray, F: np.ndarray):
        """Global descriptor matching against the previous keyframe."""
        rows = self.tracks.index_of(prev.track_ids)
        linked_prev = np.zeros(len(prev.track_ids), dtype=bool)
        linked_prev[rows >= 0] = self.tracks.tag[rows[rows >= 0]] >= 0
        pi = np.flatnonzero(~linked_prev)
        ci = np.flatnonzero(~used_cur)
        if len(pi) == 0 or len(ci) == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty
        ham = hamming_many(corners.descriptors[ci][:, None], prev.descriptors[pi][None, :]).astype(np.int64)
        # epipolar-consistent candidates only; a pair survives when it is the
        # unique best in its row and in its column
        P1 = np.broadcast_to(prev.positions[pi][None], (len(ci), len(pi), 2)).reshape(-1, 2)
        P2 = np.broadcast_to(corners.positions[ci][:, None], (len(ci), len(pi), 2)).reshape(-1, 2)
        epi = symmetric_epipolar_distance(F, P1, P2).reshape(len(ci), len(pi))
        cost = np.where((ham <= self.match.max_hamming) & (epi < self.cfg.epipolar_threshold_px), ham, BIG)
        a, b = _unique_mutual_best(cost)
        return ci[a], pi[b]
