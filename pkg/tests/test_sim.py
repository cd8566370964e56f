import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bitvo.errors import InvalidBounds
from bitvo.frame import BITMAP_BYTES, FeatureFrame, pack_edges, unpack_edges
from bitvo.geometry import CameraIntrinsics, RigidTransform
from bitvo.sim import (
    NoiseModel,
    Scene,
    SceneBounds,
    TrajectoryModel,
    frame_times,
    generate_scene,
    generate_sequence,
    rasterize_segments,
    render,
    render_frame,
    sample_trajectory,
)


@pytest.fixture(scope="module")
def scene():
    return generate_scene(1)


def start_pose():
    return sample_trajectory(TrajectoryModel(), 0.0)


# -- scene ------------------------------------------------------------------------


def test_scene_is_deterministic():
    assert generate_scene(3, 200, 300) == generate_scene(3, 200, 300)
    assert generate_scene(3, 200, 300) != generate_scene(4, 200, 300)


def test_empty_scene():
    s = generate_scene(0, n_segments=0, n_corners=0)
    assert len(s.segments) == 0 and len(s.corners) == 0


def test_too_many_corners():
    with pytest.raises(ValueError):
        generate_scene(0, n_segments=10, n_corners=41)


def test_invalid_bounds():
    with pytest.raises(InvalidBounds):
        SceneBounds(lo=(0, 0, 0), hi=(1, 0, 1))


def point_segment_distance(p, a, b):
    d = b - a
    s = np.clip(((p - a) * d).sum(-1) / (d * d).sum(-1), 0.0, 1.0)
    return np.linalg.norm(a + s[..., None] * d - p, axis=-1)


def test_corners_lie_on_segments():
    s = generate_scene(5, 150, 500)
    for c in s.corners:
        assert point_segment_distance(c, s.segments[:, 0], s.segments[:, 1]).min() < 1e-9


def test_scene_inside_bounds(scene):
    lo, hi = np.array(scene.bounds.lo), np.array(scene.bounds.hi)
    margin = 0.25  # polygons are centred inside the bounds
    assert np.all(scene.corners >= lo - margin) and np.all(scene.corners <= hi + margin)


# -- trajectories -------------------------------------------------------------------


def test_circle_is_periodic():
    m = TrajectoryModel()
    a, b = sample_trajectory(m, 0.0), sample_trajectory(m, m.period)
    assert a.angle_to(b) < 1e-9 and a.distance_to(b) < 1e-9


def test_shake_frequency():
    m = TrajectoryModel.preset("shake")
    fs = 300.0
    t = m.onset + 0.5 + np.arange(int(8 * fs)) / fs
    roll = np.array([sample_trajectory(m, x).R[2, 1] for x in t])
    spectrum = np.abs(np.fft.rfft(roll - roll.mean()))
    freq = np.fft.rfftfreq(len(roll), 1 / fs)
    assert freq[np.argmax(spectrum)] == pytest.approx(4.5, abs=0.15)


def test_jump_peak_to_trough():
    m = TrajectoryModel.preset("jump")
    t = np.linspace(0, 1 / m.frequency, 2001)
    y = np.array([sample_trajectory(m, x).translation[1] for x in t])
    assert y.max() - y.min() == pytest.approx(0.8, abs=1e-6)


@pytest.mark.parametrize("kind", ["circle", "shake", "jump", "long"])
def test_trajectories_are_continuous(kind):
    m = TrajectoryModel.preset(kind)
    dt = 1e-4
    for t in np.linspace(0, 10, 41):
        a, b = sample_trajectory(m, t), sample_trajectory(m, t + dt)
        assert a.distance_to(b) < 1e-3 and a.angle_to(b) < 1e-3


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        sample_trajectory(TrajectoryModel(), -1.0)


def test_unknown_kind():
    with pytest.raises(ValueError):
        TrajectoryModel(kind="spiral")


# -- rasterization ----------------------------------------------------------------


def raster_oracle(a, b):
    """Per-pixel loop: one pixel per integer step of the major axis."""
    pts = set()
    (x0, y0), (x1, y1) = a, b
    steep = abs(y1 - y0) > abs(x1 - x0)
    if steep:
        x0, y0, x1, y1 = y0, x0, y1, x1
    lo, hi = math.floor(min(x0, x1) + 0.5), math.floor(max(x0, x1) + 0.5)
    slope = (y1 - y0) / (x1 - x0) if x1 != x0 else 0.0
    for m in range(lo, hi + 1):
        n = math.floor(y0 + (m - x0) * slope + 0.5)
        pts.add((n, m) if steep else (m, n))
    for x, y in (a, b):
        pts.add((math.floor(x + 0.5), math.floor(y + 0.5)))
    return pts


@given(st.lists(st.floats(5, 250), min_size=4, max_size=4))
def test_rasterize_matches_loop_oracle(c):
    a, b = (c[0], c[1]), (c[2], c[3])
    img = rasterize_segments(np.array([a]), np.array([b]))
    ys, xs = np.nonzero(img)
    assert set(zip(xs.tolist(), ys.tolist())) == raster_oracle(a, b)


def test_rasterize_horizontal_line():
    img = rasterize_segments(np.array([[10.0, 5.0]]), np.array([[20.0, 5.0]]))
    assert img.sum() == 11 and img[5, 10:21].all()


def test_rasterize_clips_to_image():
    img = rasterize_segments(np.array([[-50.0, 100.0]]), np.array([[300.0, 100.0]]))
    assert img[100].all() and img.sum() == 256


# -- rendering ----------------------------------------------------------------------


def test_static_noise_free_renders_identical(scene, K):
    rng = np.random.default_rng(0)
    a = render_frame(scene, start_pose(), K, NoiseModel.off(), rng)
    b = render_frame(scene, start_pose(), K, NoiseModel.off(), rng)
    assert a == b


def test_full_drop_leaves_only_spurious(scene, K):
    noise = NoiseModel(p_corner_drop=1.0, spurious_rate=30.0, p_edge_flip=0.0, jitter_px=0.0)
    frame, labels = render(scene, start_pose(), K, noise, np.random.default_rng(1))
    assert len(labels) > 0 and np.all(labels == -1)


def test_event_cap_keeps_first_in_raster_order(K):
    # 50 x 40 grid of corners, 4 px apart on the image, all visible
    u, v = np.meshgrid(np.arange(20, 220, 4), np.arange(30, 190, 4))
    z = 2.0
    corners = np.column_stack([(u.ravel() - K.cx) / K.fx * z, (v.ravel() - K.cy) / K.fy * z, np.full(u.size, z)])
    scene = Scene(corners=corners, segments=np.zeros((0, 2, 3)))
    frame, _ = render(scene, RigidTransform.identity(), K, NoiseModel.off(), np.random.default_rng(0))
    assert u.size == 2000 and len(frame.corners) == 1000
    keys = frame.corners[:, 1].astype(int) * 256 + frame.corners[:, 0]
    all_keys = np.sort(v.ravel() * 256 + u.ravel())
    assert np.array_equal(keys, all_keys[:1000])


@given(st.integers(0, 1000))
def test_events_inside_image(seed):
    rng = np.random.default_rng(seed)
    scene = generate_scene(seed, 300, 600)
    pose = sample_trajectory(TrajectoryModel.preset("jump"), rng.uniform(0, 4))
    noise = NoiseModel(jitter_px=2.0, cluster_size=3)
    frame, labels = render(scene, pose, CameraIntrinsics(), noise, rng)
    assert len(frame.corners) <= 1000
    assert frame.corners.dtype == np.uint8
    assert len(labels) == len(frame.corners)


def test_true_corners_have_edge_context(scene, K):
    frame, labels = render(scene, start_pose(), K, NoiseModel.off(), np.random.default_rng(0))
    c = frame.corners.astype(int)
    inner = (labels >= 0) & np.all((c >= 3) & (c <= 252), axis=1)
    assert inner.sum() > 100
    for x, y in c[inner]:
        assert frame.edges[y - 3 : y + 4, x - 3 : x + 4].any()


def test_edge_density_band(scene, K):
    m = TrajectoryModel()
    dens = [
        render_frame(scene, sample_trajectory(m, t), K, NoiseModel(), np.random.default_rng(0)).edge_density()
        for t in np.linspace(0, m.period, 9)
    ]
    assert 0.05 <= min(dens) and max(dens) <= 0.25


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(p_corner_drop=1.5)
    with pytest.raises(ValueError):
        NoiseModel(jitter_px=-1)
    with pytest.raises(ValueError):
        NoiseModel(cluster_size=4)


def test_clusters_multiply_events(K):
    scene = generate_scene(2, 200, 200)
    one = render(scene, start_pose(), K, NoiseModel(spurious_rate=0, p_corner_drop=0), np.random.default_rng(0))
    three = render(
        scene, start_pose(), K, NoiseModel(spurious_rate=0, p_corner_drop=0, cluster_size=3), np.random.default_rng(0)
    )
    assert len(three[0].corners) > 1.5 * len(one[0].corners)


# -- sequences --------------------------------------------------------------------


def test_frame_times():
    assert len(frame_times(300, 1.0)) == 300
    with pytest.raises(ValueError):
        frame_times(0, 1.0)


def test_sequence_basics(K):
    scene = generate_scene(2, 300, 400)
    frames, gt = generate_sequence(scene, TrajectoryModel(), K, NoiseModel(), 300, 0.2, seed=9)
    assert len(frames) == 60 == len(gt)
    ts = [f.timestamp_ns for f in frames]
    assert all(b > a for a, b in zip(ts, ts[1:]))
    assert ts[1] - ts[0] == pytest.approx(1e9 / 300, abs=1)
    again, _ = generate_sequence(scene, TrajectoryModel(), K, NoiseModel(), 300, 0.2, seed=9)
    assert frames == again


def test_static_camera_without_noise_repeats(K):
    scene = generate_scene(2, 300, 400)
    still = TrajectoryModel(kind="circle", radius=0.0, wobble_deg=0.0)
    frames, _ = generate_sequence(scene, still, K, NoiseModel.off(), 300, 0.05, seed=1)
    assert all(np.array_equal(f.edges, frames[0].edges) for f in frames)
    assert all(np.array_equal(f.corners, frames[0].corners) for f in frames)


# -- frame container ----------------------------------------------------------------


def test_bitmap_packing_msb_first():
    edges = np.zeros((256, 256), bool)
    edges[0, 0] = True
    edges[1, 7] = True
    raw = pack_edges(edges)
    assert len(raw) == BITMAP_BYTES
    assert raw[0] == 0x80 and raw[32] == 0x01
    assert np.array_equal(unpack_edges(raw), edges)


def test_frame_validation():
    with pytest.raises(ValueError):
        FeatureFrame(0, np.zeros((0, 2)), np.zeros((10, 10), bool))
    with pytest.raises(ValueError):
        FeatureFrame(0, np.zeros((1001, 2)), np.zeros((256, 256), bool))
