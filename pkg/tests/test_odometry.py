import numpy as np
import pytest

from bitvo.errors import NotReady
from bitvo.geometry import CameraIntrinsics, RigidTransform, parallax_degrees
from bitvo.mapping import VOConfig
from bitvo.odometry import VisualOdometry, _unique_mutual_best, try_initialize
from bitvo.sim import NoiseModel, TrajectoryModel, generate_scene, iter_sequence, render, sample_trajectory
from bitvo.tracking import DescribedCorners, TrackedFeature, TrackTable

from _helpers import points_in_view


@pytest.fixture(scope="module")
def lateral_pair():
    """Two noise-free views 0.4 m apart along the camera x axis, paired by label."""
    K = CameraIntrinsics()
    scene = generate_scene(1)
    T0 = sample_trajectory(TrajectoryModel(), 0.0)
    T1 = RigidTransform(T0.rotation, T0.t + T0.R[:, 0] * 0.4)
    f0, l0 = render(scene, T0, K, NoiseModel.off(), np.random.default_rng(0))
    f1, l1 = render(scene, T1, K, NoiseModel.off(), np.random.default_rng(0))
    ids, i0, i1 = np.intersect1d(l0[l0 >= 0], l1[l1 >= 0], return_indices=True)
    i0, i1 = np.flatnonzero(l0 >= 0)[i0], np.flatnonzero(l1 >= 0)[i1]
    return K, scene, T0, T1, ids, f0.corners[i0].astype(float), f1.corners[i1].astype(float)


def scaled_errors(init, truth_c):
    X, G = init.points[init.mask], truth_c[init.mask]
    s = (X * G).sum() / (X * X).sum()
    return np.linalg.norm(s * X - G, axis=1) / np.linalg.norm(G, axis=1)


def exact_pixels(T_wc, points, K):
    P = T_wc.inverse().transform_point(points)
    return P[:, :2] / P[:, 2:] * [K.fx, K.fy] + [K.cx, K.cy]


# -- initialisation ----------------------------------------------------------------


def test_lateral_move_initialises_exactly(lateral_pair):
    K, scene, T0, T1, ids, _, _ = lateral_pair
    X = scene.corners[ids]
    init = try_initialize(exact_pixels(T0, X, K), exact_pixels(T1, X, K), K, VOConfig(), np.random.default_rng(0))
    assert init.mask.sum() > 100
    assert scaled_errors(init, T0.inverse().transform_point(X)).max() < 0.01


def test_lateral_move_from_pixel_events(lateral_pair):
    # integer corner coordinates carry up to half a pixel of quantisation
    K, scene, T0, T1, ids, uv0, uv1 = lateral_pair
    init = try_initialize(uv0, uv1, K, VOConfig(), np.random.default_rng(0))
    assert init.mask.sum() > 100
    err = scaled_errors(init, T0.inverse().transform_point(scene.corners[ids]))
    assert np.median(err) < 0.01 and err.max() < 0.05


def test_initial_map_has_unit_median_depth(lateral_pair):
    K, _, _, _, _, uv0, uv1 = lateral_pair
    init = try_initialize(uv0, uv1, K, VOConfig(), np.random.default_rng(0))
    assert np.median(init.points[init.mask, 2]) == pytest.approx(1.0)
    # baseline over median depth is scale free: 0.4 m against about 1.5 m
    assert 0.1 < np.linalg.norm(init.pose.center()) < 1.0


def test_initial_points_pass_parallax_and_cheirality(lateral_pair):
    K, _, _, _, _, uv0, uv1 = lateral_pair
    init = try_initialize(uv0, uv1, K, VOConfig(), np.random.default_rng(0))
    c0, c1 = np.zeros(3), init.pose.center()
    for X in init.points[init.mask]:
        assert parallax_degrees(c0, c1, X) >= 5.0
        assert X[2] > 0 and init.pose.transform_point(X)[2] > 0


def test_zero_disparity_is_not_ready():
    uv = np.random.default_rng(0).uniform(0, 256, (300, 2))
    with pytest.raises(NotReady):
        try_initialize(uv, uv, CameraIntrinsics(), VOConfig())


def test_distant_scene_is_not_ready():
    # a rotation produces plenty of disparity but the landmarks are too far for parallax
    rng = np.random.default_rng(2)
    K = CameraIntrinsics()
    X = points_in_view(rng, 300, depth=(400.0, 600.0), half_fov=0.4)
    T1 = RigidTransform.exp([0.0, 0.25, 0.0], [-0.3, 0.0, 0.0])
    uv0 = X[:, :2] / X[:, 2:] * K.fx + K.cx
    P1 = T1.transform_point(X)
    uv1 = P1[:, :2] / P1[:, 2:] * K.fx + K.cx
    with pytest.raises(NotReady):
        try_initialize(uv0, uv1, K, VOConfig())


def test_static_camera_never_initialises():
    scene = generate_scene(3, 600, 900)
    still = TrajectoryModel(kind="circle", radius=0.0, wobble_deg=0.0)
    vo = VisualOdometry()
    for frame, _ in iter_sequence(scene, still, CameraIntrinsics(), NoiseModel(), 300, 1000 / 300, seed=5):
        assert vo.process(frame).status == "initializing"
    assert vo.stats.frames == 1000 and not vo.initialized and vo.stats.init_attempts == 0


# -- keyframe insertion -----------------------------------------------------------


def keyframe_fixture(n_shared, seed=0):
    """A tracker whose features have no map point yet, seen by the last keyframe."""
    rng = np.random.default_rng(seed)
    K = CameraIntrinsics()
    vo = VisualOdometry(K)
    T_prev = RigidTransform()
    T_cur = RigidTransform.exp([0.0, 0.02, 0.0], [-0.4, 0.0, 0.0])
    X = points_in_view(rng, n_shared, depth=(1.5, 3.0), half_fov=0.3)
    uv_prev = X[:, :2] / X[:, 2:] * K.fx + K.cx
    P = T_cur.transform_point(X)
    uv_cur = P[:, :2] / P[:, 2:] * K.fx + K.cx
    desc = rng.integers(0, 1 << 44, n_shared, dtype=np.uint64)
    ids = np.arange(n_shared)
    vo.map.add_keyframe(T_prev, uv_prev, desc, 0, ids)
    vo.tracks = TrackTable.from_features(
        TrackedFeature(int(i), uv_cur[i], int(desc[i]), 5, 250) for i in ids
    )
    vo.T_cw = T_cur
    vo.frame_index = 250
    corners = DescribedCorners(uv_cur, desc, ids)
    return vo, corners, ids, T_cur.transform_point(X)


def test_few_tracker_matches_take_the_bruteforce_path():
    vo, corners, ids, _ = keyframe_fixture(25)
    vo.insert_keyframe(corners, ids)
    assert vo.stats.bruteforce_insertions == 1


def test_enough_tracker_matches_skip_bruteforce():
    vo, corners, ids, _ = keyframe_fixture(60)
    n_new = vo.insert_keyframe(corners, ids)
    assert vo.stats.bruteforce_insertions == 0
    assert n_new >= 30


def test_new_points_match_ground_truth():
    vo, corners, ids, truth_c = keyframe_fixture(60, seed=3)
    vo.insert_keyframe(corners, ids)
    m = vo.map
    assert len(m) >= 30
    T = vo.T_cw
    # the world frame here is exact, so no alignment is needed
    for pid in m.point_ids:
        obs = m.point(int(pid)).observations
        kf0 = [o for o in obs if o[0] == 0][0]
        k = int(np.argmin(np.linalg.norm(vo.map.keyframes[0].positions - kf0[1], axis=1)))
        X = m.positions[m.rows_of([pid])[0]]
        G = T.inverse().transform_point(truth_c[k])
        assert np.linalg.norm(X - G) / np.linalg.norm(G) < 0.02


def test_keyframe_with_rich_map_and_no_new_tracks():
    vo, corners, ids, truth_c = keyframe_fixture(60, seed=4)
    vo.insert_keyframe(corners, ids)
    before = len(vo.map)
    n_obs = len(vo.map.obs_pid)
    # same frame again: every corner is explained by an existing point
    vo.frame_index = 500
    n_new = vo.insert_keyframe(corners, ids)
    assert n_new == 0 and len(vo.map) == before
    assert len(vo.map.keyframes) == 3 and len(vo.map.obs_pid) > n_obs


def test_unique_mutual_best():
    big = np.iinfo(np.int64).max // 2
    cost = np.array([[1, 5, big], [5, 1, 1], [big, 7, 2]])
    a, b = _unique_mutual_best(cost)
    # row 1 ties between two columns; row 2's best column has a cheaper entry in row 1
    assert list(zip(a.tolist(), b.tolist())) == [(0, 0)]


# -- short run ----------------------------------------------------------------------


def test_short_circle_run_tracks():
    scene = generate_scene(11)
    vo = VisualOdometry()
    statuses = []
    for frame, _ in iter_sequence(scene, TrajectoryModel(), CameraIntrinsics(), NoiseModel(), 300, 3.0, seed=2):
        statuses.append(vo.process(frame).status)
    assert vo.initialized
    after = statuses[statuses.index("initialized") + 1 :]
    assert after and all(s == "tracking" for s in after)
    assert len(vo.stats.frame_seconds) == 900
