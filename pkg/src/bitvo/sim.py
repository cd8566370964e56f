"""Seeded simulator of the focal-plane sensor output.

Each simulated frame carries what the sensor-processor would transfer to the
host: up to 1000 corner events and a 256x256 binary edge image. A wireframe
scene of planar polygons is rendered through a pinhole camera; polygon
vertices act as the corners. An analog-noise model makes corners flicker
between frames, jitters their positions and flips edge pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidBounds
from .frame import HEIGHT, MAX_EVENTS, WIDTH, FeatureFrame
from .geometry import CameraIntrinsics, RigidTransform, euler_zyx_to_matrix
from .trajectory import Trajectory

NEAR_PLANE = 0.05


# ---------------------------------------------------------------------------
# scene
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SceneBounds:
    lo: tuple = (-1.5, -1.5, 0.6)
    hi: tuple = (1.5, 1.5, 1.8)

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi - lo <= 0):
            raise InvalidBounds(f"bounds must have positive extent on every axis: lo={self.lo} hi={self.hi}")


@dataclass(eq=False)
class Scene:
    corners: np.ndarray  # (M, 3) landmark corners, world frame
    segments: np.ndarray  # (S, 2, 3) edge segments, world frame
    bounds: SceneBounds = field(default_factory=SceneBounds)

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            np.array_equal(self.corners, other.corners)
            and np.array_equal(self.segments, other.segments)
            and self.bounds == other.bounds
        )


def _plane_basis(rng: np.random.Generator, max_tilt_deg: float = 60.0):
    tilt = np.radians(rng.uniform(0.0, max_tilt_deg))
    azim = rng.uniform(0.0, 2 * np.pi)
    normal = np.array([np.sin(tilt) * np.cos(azim), np.sin(tilt) * np.sin(azim), -np.cos(tilt)])
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(normal, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    return e1, e2


def generate_scene(
    seed: int,
    n_segments: int = 1800,
    n_corners: int = 1800,
    bounds: SceneBounds | None = None,
    size_range: tuple = (0.05, 0.22),
) -> Scene:
    """Random wireframe scene of planar polygons inside ``bounds``.

    Polygon vertices are used as corners first (each is the junction of two
    edges); any further corners are placed inside random segments.
    """
    bounds = bounds if bounds is not None else SceneBounds()
    if n_segments < 0 or n_corners < 0:
        raise ValueError("counts must be non-negative")
    if n_corners > 4 * n_segments:
        raise ValueError(f"n_corners={n_corners} exceeds 4 * n_segments={4 * n_segments}")
    rng = np.random.default_rng(seed)
    lo = np.asarray(bounds.lo, dtype=float)
    hi = np.asarray(bounds.hi, dtype=float)

    segments = []
    vertices = []
    while len(segments) < n_segments:
        remaining = n_segments - len(segments)
        k = int(rng.integers(3, 7))
        closed = remaining >= k
        if not closed:
            k = remaining + 1
        center = rng.uniform(lo, hi)
        size = rng.uniform(*size_range)
        e1, e2 = _plane_basis(rng)
        angles = np.sort(rng.uniform(0.0, 2 * np.pi, k))
        radii = size * rng.uniform(0.5, 1.0, k)
        pts = center + (radii * np.cos(angles))[:, None] * e1 + (radii * np.sin(angles))[:, None] * e2
        n_edges = k if closed else k - 1
        for i in range(n_edges):
            segments.append((pts[i], pts[(i + 1) % k]))
        vertices.extend(pts if closed else pts[1:-1])

    seg_arr = np.array(segments, dtype=float).reshape(-1, 2, 3)
    verts = np.array(vertices, dtype=float).reshape(-1, 3)
    order = rng.permutation(len(verts))
    corners = verts[order[: min(n_corners, len(verts))]]
    extra = n_corners - len(corners)
    if extra > 0:
        which = rng.integers(0, len(seg_arr), extra)
        s = rng.uniform(0.2, 0.8, extra)[:, None]
        inner = seg_arr[which, 0] + s * (seg_arr[which, 1] - seg_arr[which, 0])
        corners = np.vstack([corners, inner])
    return Scene(corners=corners.reshape(-1, 3), segments=seg_arr, bounds=bounds)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

TRAJECTORY_KINDS = ("circle", "shake", "jump", "long")


@dataclass(frozen=True)
class TrajectoryModel:
    """Parametric camera motion. Lengths in metres, times in seconds, angles in degrees.

    circle: camera centre on a circle of ``radius`` in the image plane,
        one revolution per ``period``, with a gentle periodic wobble.
    shake: camera centre on a circle of radius ``sway`` per ``sway_period``
        plus a rotational oscillation at ``frequency`` Hz of
        ``amplitude_deg`` about all three axes. The oscillation fades in
        smoothly over half a second from ``onset``.
    jump: vertical oscillation with ``amplitude`` peak-to-trough at
        ``frequency`` Hz, plus a slow sideways sway.
    long: figure-of-eight over ``period`` seconds spanning ``radius``.
    """

    kind: str = "circle"
    radius: float = 0.4
    period: float = 4.0
    amplitude: float = 0.8
    frequency: float = 4.5
    amplitude_deg: float = 3.0
    wobble_deg: float = 4.0
    sway: float = 0.15
    sway_period: float = 4.0
    onset: float = 0.0

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}; expected one of {TRAJECTORY_KINDS}")

    @classmethod
    def preset(cls, kind: str) -> "TrajectoryModel":
        if kind == "jump":
            return cls(kind="jump", frequency=0.5)
        if kind == "long":
            return cls(kind="long", radius=0.6, period=12.0)
        if kind == "shake":
            # calm sideways motion first so the odometry can bootstrap
            return cls(kind="shake", sway=0.4, sway_period=4.0, onset=2.0)
        return cls(kind=kind)


def sample_trajectory(model: TrajectoryModel, t: float) -> RigidTransform:
    """Camera-to-world pose ``T_wc`` at time ``t``."""
    if t < 0:
        raise ValueError("time must be non-negative")
    w = 2 * np.pi / model.period
    wob = np.radians(model.wobble_deg)
    if model.kind == "circle":
        c = np.array([model.radius * (np.cos(w * t) - 1.0), model.radius * np.sin(w * t), 0.0])
        R = euler_zyx_to_matrix(wob * np.sin(w * t), wob * (np.cos(w * t) - 1.0), 0.5 * wob * np.sin(2 * w * t))
    elif model.kind == "shake":
        ws = 2 * np.pi / model.sway_period
        c = np.array([model.sway * (np.cos(ws * t) - 1.0), model.sway * np.sin(ws * t), 0.0])
        u = np.clip((t - model.onset) / 0.5, 0.0, 1.0)
        a = np.radians(model.amplitude_deg) * u * u * (3.0 - 2.0 * u)
        phase = 2 * np.pi * model.frequency * t
        R = euler_zyx_to_matrix(a * np.sin(phase), a * np.sin(phase + 2.0), a * np.sin(phase + 4.0))
    elif model.kind == "jump":
        ws = 2 * np.pi / model.sway_period
        phase = 2 * np.pi * model.frequency * t
        c = np.array([model.sway * np.sin(ws * t), -0.5 * model.amplitude * (1.0 - np.cos(phase)), 0.0])
        R = euler_zyx_to_matrix(wob * np.sin(phase), 0.0, 0.5 * wob * np.sin(ws * t))
    else:  # long
        c = np.array(
            [model.radius * np.sin(w * t), 0.3 * model.radius * np.sin(2 * w * t), 0.25 * model.radius * (1 - np.cos(w * t))]
        )
        R = euler_zyx_to_matrix(0.5 * wob * np.sin(2 * w * t), 2 * wob * np.sin(w * t), 0.5 * wob * np.sin(w * t))
    return RigidTransform.from_matrix(R, c)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    p_corner_drop: float = 0.10
    spurious_rate: float = 50.0
    p_edge_flip: float = 0.005
    jitter_px: float = 0.5
    cluster_size: int = 1

    def __post_init__(self):
        for name in ("p_corner_drop", "p_edge_flip"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.spurious_rate < 0 or self.jitter_px < 0:
            raise ValueError("spurious_rate and jitter_px must be non-negative")
        if not 1 <= self.cluster_size <= 3:
            raise ValueError("cluster_size must be in [1, 3]")

    @classmethod
    def off(cls) -> "NoiseModel":
        return cls(p_corner_drop=0.0, spurious_rate=0.0, p_edge_flip=0.0, jitter_px=0.0)


def _round_px(uv: np.ndarray) -> np.ndarray:
    return np.floor(uv + 0.5).astype(np.int64)


def _clip_to_box(a: np.ndarray, b: np.ndarray, lo: float, hi_x: float, hi_y: float):
    """Liang-Barsky clipping of 2D segments a->b to [lo, hi_x] x [lo, hi_y]."""
    d = b - a
    t0 = np.zeros(len(a))
    t1 = np.ones(len(a))
    ok = np.ones(len(a), dtype=bool)
    for p, q in (
        (-d[:, 0], a[:, 0] - lo),
        (d[:, 0], hi_x - a[:, 0]),
        (-d[:, 1], a[:, 1] - lo),
        (d[:, 1], hi_y - a[:, 1]),
    ):
        parallel = p == 0
        ok &= ~(parallel & (q < 0))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(parallel, 0.0, q / np.where(parallel, 1.0, p))
        t0 = np.where(~parallel & (p < 0), np.maximum(t0, r), t0)
        t1 = np.where(~parallel & (p > 0), np.minimum(t1, r), t1)
    ok &= t0 <= t1
    return a + t0[:, None] * d, a + t1[:, None] * d, ok


def rasterize_segments(uv0: np.ndarray, uv1: np.ndarray, width: int = WIDTH, height: int = HEIGHT) -> np.ndarray:
    """Draw 1-pixel-wide lines and return a boolean image.

    One pixel is set per integer coordinate along each line's major axis,
    at the rounded crossing of the continuous line with that pixel row or
    column. Pixels therefore only change when the line moves across a
    pixel boundary, not with the sub-pixel position of its endpoints.
    Rounded endpoints are always drawn.
    """
    edges = np.zeros((height, width), dtype=bool)
    if len(uv0) == 0:
        return edges
    a, b, ok = _clip_to_box(uv0, uv1, 0.0, width - 1.0, height - 1.0)
    a, b = a[ok], b[ok]
    if len(a) == 0:
        return edges
    d = b - a
    major = (np.abs(d[:, 1]) > np.abs(d[:, 0])).astype(np.int64)
    rows = np.arange(len(a))
    a_maj, b_maj = a[rows, major], b[rows, major]
    a_min, b_min = a[rows, 1 - major], b[rows, 1 - major]
    lo = np.floor(np.minimum(a_maj, b_maj) + 0.5).astype(np.int64)
    hi = np.floor(np.maximum(a_maj, b_maj) + 0.5).astype(np.int64)
    n = hi - lo + 1
    seg = np.repeat(rows, n)
    m = lo[seg] + (np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n))
    d_maj = (b_maj - a_maj)[seg]
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(d_maj != 0, (b_min - a_min)[seg] / np.where(d_maj != 0, d_maj, 1.0), 0.0)
    minor = np.floor(a_min[seg] + (m - a_maj[seg]) * slope + 0.5).astype(np.int64)
    maj_is_y = major[seg] == 1
    x = np.where(maj_is_y, minor, m)
    y = np.where(maj_is_y, m, minor)
    ends = _round_px(np.vstack([a, b]))
    x = np.clip(np.concatenate([x, ends[:, 0]]), 0, width - 1)
    y = np.clip(np.concatenate([y, ends[:, 1]]), 0, height - 1)
    edges[y, x] = True
    return edges


def render(
    scene: Scene,
    pose_wc: RigidTransform,
    K: CameraIntrinsics,
    noise: NoiseModel,
    rng: np.random.Generator,
    t: float = 0.0,
):
    """Render one frame. Returns ``(frame, labels)``.

    ``labels[i]`` is the scene corner index that produced event ``i``, or -1
    for a spurious event.
    """
    T_cw = pose_wc.inverse()
    R, tr = T_cw.R, T_cw.t

    # edges
    if len(scene.segments):
        P0 = scene.segments[:, 0] @ R.T + tr
        P1 = scene.segments[:, 1] @ R.T + tr
        keep = (P0[:, 2] > NEAR_PLANE) | (P1[:, 2] > NEAR_PLANE)
        P0, P1 = P0[keep], P1[keep]
        dz = P1[:, 2] - P0[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.clip((NEAR_PLANE - P0[:, 2]) / dz, 0.0, 1.0)
        P0 = np.where((P0[:, 2] <= NEAR_PLANE)[:, None], P0 + s[:, None] * (P1 - P0), P0)
        P1 = np.where((P1[:, 2] <= NEAR_PLANE)[:, None], P0 + s[:, None] * (P1 - P0), P1)
        uv0 = np.column_stack([K.fx * P0[:, 0] / P0[:, 2] + K.cx, K.fy * P0[:, 1] / P0[:, 2] + K.cy])
        uv1 = np.column_stack([K.fx * P1[:, 0] / P1[:, 2] + K.cx, K.fy * P1[:, 1] / P1[:, 2] + K.cy])
        edges = rasterize_segments(uv0, uv1, K.width, K.height)
    else:
        edges = np.zeros((K.height, K.width), dtype=bool)

    # corners
    Pc = scene.corners @ R.T + tr if len(scene.corners) else np.zeros((0, 3))
    front = Pc[:, 2] > NEAR_PLANE
    idx = np.flatnonzero(front)
    uv = np.column_stack([K.fx * Pc[idx, 0] / Pc[idx, 2] + K.cx, K.fy * Pc[idx, 1] / Pc[idx, 2] + K.cy])
    px = _round_px(uv) if len(idx) else np.zeros((0, 2), dtype=np.int64)
    inside = (px[:, 0] >= 0) & (px[:, 0] < K.width) & (px[:, 1] >= 0) & (px[:, 1] < K.height)
    px, labels = px[inside], idx[inside]

    if noise.jitter_px > 0 and len(px):
        px = px + np.rint(rng.normal(0.0, noise.jitter_px, px.shape)).astype(np.int64)
    if noise.p_corner_drop > 0 and len(px):
        survive = rng.random(len(px)) >= noise.p_corner_drop
        px, labels = px[survive], labels[survive]
    if noise.cluster_size > 1 and len(px):
        offsets = rng.integers(-1, 2, (len(px), noise.cluster_size - 1, 2))
        dup = (px[:, None, :] + offsets).reshape(-1, 2)
        px = np.vstack([px, dup])
        labels = np.concatenate([labels, np.repeat(labels, noise.cluster_size - 1)])
    n_spurious = int(rng.poisson(noise.spurious_rate)) if noise.spurious_rate > 0 else 0
    if n_spurious:
        spur = np.column_stack([rng.integers(0, K.width, n_spurious), rng.integers(0, K.height, n_spurious)])
        px = np.vstack([px, spur])
        labels = np.concatenate([labels, np.full(n_spurious, -1)])
    px[:, 0] = np.clip(px[:, 0], 0, K.width - 1)
    px[:, 1] = np.clip(px[:, 1], 0, K.height - 1)

    # event readout scans in raster order; a pixel fires at most once
    keys = px[:, 1] * K.width + px[:, 0]
    _, first = np.unique(keys, return_index=True)
    first = first[:MAX_EVENTS]
    px, labels = px[first], labels[first]

    if noise.p_edge_flip > 0:
        n_flip = int(rng.binomial(edges.size, noise.p_edge_flip))
        flat = edges.reshape(-1)
        pos = np.unique(rng.integers(0, edges.size, n_flip))
        flat[pos] = ~flat[pos]

    frame = FeatureFrame(timestamp_ns=int(round(t * 1e9)), corners=px.astype(np.uint8), edges=edges)
    return frame, labels.astype(np.int64)


def render_frame(scene, pose_wc, K, noise, rng, t=0.0) -> FeatureFrame:
    return render(scene, pose_wc, K, noise, rng, t)[0]


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------


def frame_times(fps: float, duration: float) -> np.ndarray:
    if fps <= 0 or duration <= 0:
        raise ValueError("fps and duration must be positive")
    n = int(round(fps * duration))
    return np.arange(n) / fps


def iter_sequence(scene, model, K, noise, fps, duration, seed, with_labels=False):
    """Lazily yield ``(frame, pose_wc)`` (plus labels if asked) for each frame."""
    rng = np.random.default_rng(seed)
    for t in frame_times(fps, duration):
        pose = sample_trajectory(model, float(t))
        frame, labels = render(scene, pose, K, noise, rng, float(t))
        if with_labels:
            yield frame, pose, labels
        else:
            yield frame, pose


def generate_sequence(scene, model, K, noise, fps, duration, seed):
    """Render a whole sequence into memory. Returns ``(frames, ground_truth)``."""
    frames = []
    gt = Trajectory()
    for frame, pose in iter_sequence(scene, model, K, noise, fps, duration, seed):
        frames.append(frame)
        gt.append(frame.timestamp_ns * 1e-9, pose)
    return frames, gt
