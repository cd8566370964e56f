"""Descriptor-based data association.

Frame-to-frame tracking chains corner matches between consecutive frames so
a feature can be followed across arbitrary frame gaps. Map-to-frame
matching projects map points into the image and looks for a corner with a
close descriptor around each projection. Both search a small pixel radius
and resolve contention greedily by ascending Hamming distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .descriptor import describe, hamming, hamming_many
from .errors import EmptyList
from ._kernels import match_kernel
from .frame import HEIGHT, WIDTH, FeatureFrame
from .geometry import CameraIntrinsics, RigidTransform, project_points


@dataclass(frozen=True)
class MatchParams:
    search_radius: float = 4.0
    max_hamming: int = 10
    # frames a track may go unmatched before it is dropped
    max_missed: int = 0
    # recent descriptors kept per track; a candidate is scored by the
    # smallest distance to any of them
    memory: int = 1
    # let tracks that already continued at least once claim corners before
    # tracks born in the previous frame
    prefer_established: bool = False

    def __post_init__(self):
        if not 3 <= self.search_radius <= 5:
            raise ValueError("search_radius must lie in [3, 5] pixels")
        if not 0 <= self.max_hamming <= 44:
            raise ValueError("max_hamming must lie in [0, 44]")
        if self.max_missed < 0:
            raise ValueError("max_missed must be non-negative")
        if self.memory < 1:
            raise ValueError("memory must be at least 1")


@dataclass
class TrackedFeature:
    track_id: int
    position: np.ndarray
    descriptor: int
    age: int = 0
    last_seen: int = 0


@dataclass
class DescribedCorners:
    """Corners of one frame that have a full descriptor window."""

    positions: np.ndarray  # (M, 2) float, (x, y)
    descriptors: np.ndarray  # (M,) uint64
    source_index: np.ndarray  # (M,) index into the frame's corner list

    def __len__(self) -> int:
        return len(self.descriptors)


def describe_frame(frame: FeatureFrame) -> DescribedCorners:
    desc, keep = describe(frame.edges, frame.corners)
    return DescribedCorners(
        positions=frame.corners[keep].astype(float),
        descriptors=desc,
        source_index=np.flatnonzero(keep),
    )


# ---------------------------------------------------------------------------
# assignment
# ---------------------------------------------------------------------------


def candidate_pairs(query_xy: np.ndarray, corner_xy: np.ndarray, radius: float):
    """All (query, corner) index pairs closer than ``radius`` pixels."""
    if len(query_xy) == 0 or len(corner_xy) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    a = cKDTree(np.asarray(query_xy, dtype=float))
    b = cKDTree(np.asarray(corner_xy, dtype=float))
    sdm = a.sparse_distance_matrix(b, radius, output_type="ndarray")
    return sdm["i"].astype(np.int64), sdm["j"].astype(np.int64), sdm["v"]


def greedy_assign(qi: np.ndarray, cj: np.ndarray, cost: np.ndarray, tiebreak: np.ndarray | None = None):
    """One-to-one greedy assignment by ascending ``cost``.

    Equivalent to walking all pairs in sorted order and accepting a pair when
    neither endpoint is taken yet; executed in vectorized rounds. Ties are
    broken by ``tiebreak`` (e.g. pixel distance), then by indices.
    Returns the positions (into the input arrays) of accepted pairs.
    """
    if len(qi) == 0:
        return np.zeros(0, dtype=np.int64)
    tb = np.zeros(len(qi)) if tiebreak is None else tiebreak
    order = np.lexsort((cj, qi, tb, cost))
    qi, cj = qi[order], cj[order]
    nq, nc, big = int(qi.max()) + 1, int(cj.max()) + 1, len(order)
    alive = np.ones(len(order), dtype=bool)
    accepted = []
    while True:
        live = np.flatnonzero(alive)
        if len(live) == 0:
            break
        # a pair is accepted when it has the best rank at both endpoints
        best_q = np.full(nq, big)
        best_c = np.full(nc, big)
        np.minimum.at(best_q, qi[live], live)
        np.minimum.at(best_c, cj[live], live)
        take = live[(best_q[qi[live]] == live) & (best_c[cj[live]] == live)]
        accepted.append(take)
        taken_q = np.zeros(nq, dtype=bool)
        taken_c = np.zeros(nc, dtype=bool)
        taken_q[qi[take]] = True
        taken_c[cj[take]] = True
        alive[live] &= ~(taken_q[qi[live]] | taken_c[cj[live]])
    return np.sort(order[np.concatenate(accepted)])


def match_descriptors(query_xy, query_desc, corners: DescribedCorners, radius, max_hamming, priority=None):
    """Radius-limited, threshold-gated, one-to-one descriptor matching.

    ``query_desc`` is (Q,) or (Q, M); with several descriptors per query the
    smallest distance counts. ``priority`` (Q,) integers, lower first, take
    precedence over the distance in the greedy order; remaining ties go to
    the closer corner. Returns ``(query_idx, corner_idx, hamming)`` of
    accepted matches, ordered by query.
    """
    query_xy = np.asarray(query_xy, dtype=float).reshape(-1, 2)
    qd = np.asarray(query_desc, dtype=np.uint64)
    if qd.ndim == 1:
        qd = qd[:, None]
    if len(query_xy) == 0 or len(corners) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    prio = np.zeros(len(query_xy), dtype=np.int64) if priority is None else np.asarray(priority, dtype=np.int64)
    cxy = corners.positions.astype(np.int64)
    return match_kernel(
        np.ascontiguousarray(query_xy[:, 0]),
        np.ascontiguousarray(query_xy[:, 1]),
        np.ascontiguousarray(qd),
        cxy[:, 0].copy(),
        cxy[:, 1].copy(),
        np.ascontiguousarray(corners.descriptors, dtype=np.uint64),
        float(radius),
        int(max_hamming),
        prio,
        WIDTH,
        HEIGHT,
    )


def match_descriptors_reference(query_xy, query_desc, corners: DescribedCorners, radius, max_hamming, priority=None):
    """Numpy formulation of :func:`match_descriptors`, kept as a cross-check.

    ``query_desc`` is (Q,) or (Q, M); with several descriptors per query the
    smallest distance counts. ``priority`` (Q,) integers, lower first, take
    precedence over the distance in the greedy order. Returns
    ``(query_idx, corner_idx, hamming)`` of accepted matches.
    """
    qi, cj, dist = candidate_pairs(query_xy, corners.positions, radius)
    qd = np.asarray(query_desc, dtype=np.uint64)[qi]
    cd = corners.descriptors[cj]
    if qd.ndim == 2:
        ham = hamming_many(qd, cd[:, None]).min(axis=1).astype(np.int64)
    else:
        ham = hamming_many(qd, cd).astype(np.int64)
    ok = ham <= max_hamming
    qi, cj, dist, ham = qi[ok], cj[ok], dist[ok], ham[ok]
    cost = ham if priority is None else ham + (max_hamming + 1) * np.asarray(priority, dtype=np.int64)[qi]
    take = greedy_assign(qi, cj, cost, dist)
    return qi[take], cj[take], ham[take]


# ---------------------------------------------------------------------------
# frame-to-frame
# ---------------------------------------------------------------------------


@dataclass
class TrackUpdate:
    continued: np.ndarray  # track ids matched in this frame
    continued_corner: np.ndarray  # corner index each continued track matched
    new: np.ndarray  # ids of tracks born in this frame
    new_corner: np.ndarray
    dropped: np.ndarray  # ids of tracks removed in this frame
    distances: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    continued_tag: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def corner_to_track(self, n_corners: int) -> np.ndarray:
        out = np.full(n_corners, -1, dtype=np.int64)
        out[self.continued_corner] = self.continued
        out[self.new_corner] = self.new
        return out


class TrackTable:
    """Struct-of-arrays store of live tracks, advanced once per frame."""

    def __init__(self):
        self.ids = np.zeros(0, dtype=np.int64)
        self.positions = np.zeros((0, 2))
        self.descriptors = np.zeros(0, dtype=np.uint64)
        self.age = np.zeros(0, dtype=np.int64)
        self.last_seen = np.zeros(0, dtype=np.int64)
        self.missed = np.zeros(0, dtype=np.int64)
        # (N, memory) recent descriptors, newest in column 0
        self.history = np.zeros((0, 1), dtype=np.uint64)
        # free integer label per track for the caller (-1 = none)
        self.tag = np.zeros(0, dtype=np.int64)
        self.next_id = 0

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_features(cls, features) -> "TrackTable":
        table = cls()
        features = list(features)
        if features:
            table.ids = np.array([f.track_id for f in features], dtype=np.int64)
            table.positions = np.array([f.position for f in features], dtype=float).reshape(-1, 2)
            table.descriptors = np.array([f.descriptor for f in features], dtype=np.uint64)
            table.age = np.array([f.age for f in features], dtype=np.int64)
            table.last_seen = np.array([f.last_seen for f in features], dtype=np.int64)
            table.missed = np.zeros(len(features), dtype=np.int64)
            table.history = table.descriptors[:, None].copy()
            table.tag = np.full(len(features), -1, dtype=np.int64)
            table.next_id = int(table.ids.max()) + 1
        return table

    def features(self) -> list:
        return [
            TrackedFeature(int(i), p.copy(), int(d), int(a), int(s))
            for i, p, d, a, s in zip(self.ids, self.positions, self.descriptors, self.age, self.last_seen)
        ]

    def set_tag(self, track_ids, values) -> None:
        rows = self.index_of(track_ids)
        ok = rows >= 0
        self.tag[rows[ok]] = np.broadcast_to(np.asarray(values, dtype=np.int64), rows.shape)[ok]

    def index_of(self, track_ids) -> np.ndarray:
        """Row of each id in ``track_ids`` (-1 when not live)."""
        # rows stay sorted by id: removal keeps order, new ids are larger
        track_ids = np.asarray(track_ids, dtype=np.int64)
        if len(self.ids) == 0:
            return np.full(len(track_ids), -1)
        rows = np.clip(np.searchsorted(self.ids, track_ids), 0, len(self.ids) - 1)
        return np.where(self.ids[rows] == track_ids, rows, -1)

    def _keep(self, mask):
        self.ids = self.ids[mask]
        self.positions = self.positions[mask]
        self.descriptors = self.descriptors[mask]
        self.age = self.age[mask]
        self.last_seen = self.last_seen[mask]
        self.missed = self.missed[mask]
        self.history = self.history[mask]
        self.tag = self.tag[mask]


def match_frame_to_frame(
    tracks: TrackTable, corners: DescribedCorners, params: MatchParams, frame_index: int = 0
) -> TrackUpdate:
    """Advance ``tracks`` by one frame in place and report what happened."""
    if tracks.history.shape[1] != params.memory:
        tracks.history = _resize_history(tracks.history, tracks.descriptors, params.memory)
    query = tracks.history if params.memory > 1 else tracks.descriptors
    priority = (tracks.age == 0).astype(np.int64) if params.prefer_established else None
    qi, cj, ham = match_descriptors(
        tracks.positions, query, corners, params.search_radius, params.max_hamming, priority
    )
    matched = np.zeros(len(tracks), dtype=bool)
    matched[qi] = True
    continued = tracks.ids[qi].copy()
    continued_tag = tracks.tag[qi].copy()

    tracks.positions[qi] = corners.positions[cj]
    tracks.descriptors[qi] = corners.descriptors[cj]
    if params.memory > 1:
        tracks.history[qi, 1:] = tracks.history[qi, :-1]
    tracks.history[qi, 0] = corners.descriptors[cj]
    tracks.age[qi] += 1
    tracks.last_seen[qi] = frame_index
    tracks.missed[qi] = 0
    tracks.missed[~matched] += 1

    # grace frames only protect tracks that have been matched at least once
    drop = (tracks.missed > params.max_missed) | ((tracks.missed > 0) & (tracks.age == 0))
    dropped = tracks.ids[drop].copy()
    if drop.any():
        tracks._keep(~drop)

    used = np.zeros(len(corners), dtype=bool)
    used[cj] = True
    fresh = np.flatnonzero(~used)
    new_ids = np.arange(tracks.next_id, tracks.next_id + len(fresh), dtype=np.int64)
    tracks.next_id += len(fresh)
    fresh_desc = corners.descriptors[fresh]
    tracks.ids = np.concatenate([tracks.ids, new_ids])
    tracks.positions = np.concatenate([tracks.positions, corners.positions[fresh]])
    tracks.descriptors = np.concatenate([tracks.descriptors, fresh_desc])
    tracks.history = np.concatenate([tracks.history, np.repeat(fresh_desc[:, None], params.memory, axis=1)])
    tracks.age = np.concatenate([tracks.age, np.zeros(len(fresh), dtype=np.int64)])
    tracks.last_seen = np.concatenate([tracks.last_seen, np.full(len(fresh), frame_index, dtype=np.int64)])
    tracks.missed = np.concatenate([tracks.missed, np.zeros(len(fresh), dtype=np.int64)])
    tracks.tag = np.concatenate([tracks.tag, np.full(len(fresh), -1, dtype=np.int64)])

    return TrackUpdate(
        continued=continued,
        continued_corner=cj,
        new=new_ids,
        new_corner=fresh,
        dropped=dropped,
        distances=ham,
        continued_tag=continued_tag,
    )


def _resize_history(history: np.ndarray, latest: np.ndarray, memory: int) -> np.ndarray:
    out = np.repeat(latest[:, None], memory, axis=1)
    keep = min(memory, history.shape[1])
    out[:, :keep] = history[:, :keep]
    return out


# ---------------------------------------------------------------------------
# map-to-frame
# ---------------------------------------------------------------------------


def visible_projections(points_w: np.ndarray, T_cw: RigidTransform, K: CameraIntrinsics):
    """Project world points; return ``(uv, depth, visible)``."""
    P = np.asarray(points_w, dtype=float).reshape(-1, 3)
    Pc = P @ T_cw.R.T + T_cw.t
    uv, front = project_points(K, Pc)
    visible = front & K.in_bounds(np.where(front[:, None], uv, -1.0))
    return uv, Pc[:, 2], visible


def match_map_to_frame(
    point_ids: np.ndarray,
    points_w: np.ndarray,
    representative: np.ndarray,
    T_prior: RigidTransform,
    K: CameraIntrinsics,
    corners: DescribedCorners,
    params: MatchParams,
):
    """Match map points to corners around their projections under ``T_prior``.

    ``representative`` is (P,) or (P, M) when points carry several
    descriptors. Returns ``(point_ids, corner_idx, hamming)`` of accepted matches.
    """
    point_ids = np.asarray(point_ids, dtype=np.int64)
    if len(point_ids) == 0 or len(corners) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    uv, _, visible = visible_projections(points_w, T_prior, K)
    vis = np.flatnonzero(visible)
    qi, cj, ham = match_descriptors(
        uv[vis], np.asarray(representative, dtype=np.uint64)[vis], corners, params.search_radius, params.max_hamming
    )
    return point_ids[vis[qi]], cj, ham


def most_descriptive(descriptors) -> int:
    """Descriptor with the smallest median Hamming distance to the others."""
    d = np.asarray([int(x) for x in descriptors], dtype=np.uint64)
    if len(d) == 0:
        raise EmptyList("no descriptors to choose from")
    if len(d) <= 2:
        return int(d[0])
    D = hamming_many(d[:, None], d[None, :]).astype(float)
    # distances to the others only: drop the zero self-distance of each row
    others = D[~np.eye(len(d), dtype=bool)].reshape(len(d), len(d) - 1)
    med = np.median(others, axis=1)
    return int(d[int(np.argmin(med))])


__all__ = [
    "MatchParams",
    "TrackedFeature",
    "TrackTable",
    "TrackUpdate",
    "DescribedCorners",
    "describe_frame",
    "match_frame_to_frame",
    "match_map_to_frame",
    "match_descriptors",
    "match_descriptors_reference",
    "greedy_assign",
    "candidate_pairs",
    "most_descriptive",
    "hamming",
]
