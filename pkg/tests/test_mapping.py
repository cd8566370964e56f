import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bitvo.geometry import CameraIntrinsics, RigidTransform
from bitvo.lm import HuberLoss, LMProblem, levenberg_marquardt
from bitvo.mapping import Map, VOConfig, refine_points, should_insert_keyframe, structure_only_ba
from bitvo.tracking import most_descriptive

from _helpers import points_in_view

seeds = st.integers(0, 2**32 - 1)


# -- configuration ----------------------------------------------------------------


def test_default_config_values():
    c = VOConfig()
    assert (c.min_disparity_px, c.min_parallax_deg, c.min_init_points) == (20.0, 5.0, 100)
    assert (c.kf_min_frame_gap, c.kf_min_tracked, c.kf_depth_ratio, c.kf_bruteforce_below) == (200, 50, 0.12, 30)
    assert (c.huber_delta_px, c.max_lm_iters) == (2.0, 10)
    assert (c.ransac_iterations, c.ransac_threshold_px, c.ransac_confidence) == (500, 2.0, 0.99)


@pytest.mark.parametrize("name", ["min_disparity_px", "huber_delta_px", "kf_min_frame_gap", "max_lm_iters"])
def test_config_rejects_non_positive(name):
    with pytest.raises(ValueError):
        VOConfig(**{name: 0})


# -- keyframe predicate ------------------------------------------------------------


def keyframe_oracle(gap, tracked, ratio):
    enough_frames = gap >= 200
    enough_tracks = tracked >= 50
    far_enough = ratio > 0.12
    return enough_frames and enough_tracks and far_enough


GRID = list(itertools.product([150, 199, 200], [49, 50, 80], [0.10, 0.12, 0.13]))


@pytest.mark.parametrize("gap, tracked, ratio", GRID)
def test_keyframe_truth_table(gap, tracked, ratio):
    depth = 2.5
    assert should_insert_keyframe(gap, tracked, [ratio * depth], depth, VOConfig()) == keyframe_oracle(
        gap, tracked, ratio
    )


def test_keyframe_examples():
    cfg = VOConfig()
    assert not should_insert_keyframe(199, 80, [0.2], 1.0, cfg)
    assert not should_insert_keyframe(250, 49, [0.2], 1.0, cfg)
    assert should_insert_keyframe(250, 80, [0.13, 0.5, 0.9], 1.0, cfg)


def test_keyframe_distance_uses_nearest_keyframe():
    cfg = VOConfig()
    assert not should_insert_keyframe(250, 80, [0.5, 0.05, 0.9], 1.0, cfg)


# -- map containers ----------------------------------------------------------------


def small_map():
    m = Map(recent_size=2)
    m.add_keyframe(RigidTransform(), np.zeros((0, 2)), np.zeros(0, np.uint64), 0)
    m.add_keyframe(RigidTransform(translation=[-0.1, 0, 0]), np.zeros((0, 2)), np.zeros(0, np.uint64), 10)
    ids = m.add_points(
        [[0, 0, 2], [1, 0, 3], [0, 1, 4]],
        0, np.zeros((3, 2)), [1, 2, 3],
        1, np.ones((3, 2)), [5, 6, 7],
    )  # fmt: skip
    return m, ids


def test_points_get_two_observations():
    m, ids = small_map()
    assert ids.tolist() == [0, 1, 2]
    p = m.point(1)
    assert [o[0] for o in p.observations] == [0, 1]
    assert np.allclose(p.position, [1, 0, 3])


def test_one_observation_per_keyframe():
    m, _ = small_map()
    m.add_observations([0], 1, [[9, 9]], [99])
    assert len(m.point(0).observations) == 2


def test_representative_follows_most_descriptive():
    m, _ = small_map()
    m.add_keyframe(RigidTransform(translation=[-0.2, 0, 0]), np.zeros((0, 2)), np.zeros(0, np.uint64), 20)
    m.add_observations([0], 2, [[2, 2]], [5])
    p = m.point(0)
    assert p.representative_descriptor == most_descriptive([o[2] for o in p.observations]) == 5


def test_remove_points_drops_observations():
    m, _ = small_map()
    m.remove_points([1])
    assert m.point_ids.tolist() == [0, 2]
    assert 1 not in m.obs_pid
    with pytest.raises(KeyError):
        m.point(1)
    assert m.rows_of([0, 1, 2]).tolist() == [0, -1, 1]


def test_snapshot_is_independent():
    m, _ = small_map()
    snap = m.snapshot()
    m.positions[0] = 100.0
    m.remove_points([2])
    assert np.allclose(snap.positions[0], [0, 0, 2]) and len(snap) == 3


def test_recent_descriptor_memory():
    m, _ = small_map()
    m.remember([1], [42])
    m.remember([1], [43])
    assert m.recent[1].tolist() == [43, 42]
    assert m.matching_descriptors()[1].tolist() == [2, 43, 42]


def test_candidate_confirmation_and_removal():
    cfg = VOConfig(point_confirm_hits=3, point_confirm_window=20)
    m = Map()
    ids = m.add_points(np.ones((3, 3)), 0, np.zeros((3, 2)), [0, 0, 0], 1, np.zeros((3, 2)), [0, 0, 0],
                       confirmed=False, born=0)  # fmt: skip
    for f in range(1, 4):
        gone = m.vote(ids[:2], [True, False], f, cfg)
    assert m.confirmed[0] and not m.confirmed[1]
    assert gone.tolist() == [1]
    # the never-voted candidate expires with the window
    gone = m.vote([], [], 21, cfg)
    assert gone.tolist() == [2] and m.point_ids.tolist() == [0]


# -- structure-only bundle adjustment ---------------------------------------------


def ba_fixture(rng, n=50, n_kf=3):
    K = CameraIntrinsics()
    m = Map()
    poses = [RigidTransform(translation=[-0.15 * k, 0.02 * k, 0.0]) for k in range(n_kf)]
    X = points_in_view(rng, n, depth=(1.5, 4.0), half_fov=0.4)
    proj = []
    for T in poses:
        P = T.transform_point(X)
        proj.append(P[:, :2] / P[:, 2:] * K.fx + K.cx)
        m.add_keyframe(T, proj[-1], np.zeros(n, np.uint64), 0)
    m.add_points(X, 0, proj[0], np.zeros(n, np.uint64), 1, proj[1], np.zeros(n, np.uint64))
    for k in range(2, n_kf):
        m.add_observations(m.point_ids, k, proj[k], np.zeros(n, np.uint64))
    return K, m, X


def test_ba_noise_free_map_is_unchanged(rng):
    K, m, X = ba_fixture(rng)
    assert structure_only_ba(m, K, VOConfig()) == 0
    # projections carry round-off, so "unchanged" means to machine precision
    assert np.abs(m.positions - X).max() < 1e-12


def test_ba_restores_displaced_point(rng):
    K, m, X = ba_fixture(rng)
    m.positions[7] += [0.1, 0.0, 0.0]
    assert structure_only_ba(m, K, VOConfig()) == 0
    assert np.linalg.norm(m.positions[7] - X[7]) < 1e-6


def test_ba_prunes_corrupted_observation(rng):
    K, m, X = ba_fixture(rng)
    row = np.flatnonzero((m.obs_pid == 11) & (m.obs_kf == 2))[0]
    m.obs_uv[row] += [30.0, 0.0]
    assert structure_only_ba(m, K, VOConfig(huber_delta_px=2.0)) == 1
    assert 11 not in m.point_ids and len(m) == 49


def test_ba_on_empty_map():
    assert structure_only_ba(Map(), CameraIntrinsics(), VOConfig()) == 0


@given(seeds)
def test_refine_points_never_increases_cost(seed):
    rng = np.random.default_rng(seed)
    K, m, X = ba_fixture(rng, n=20)
    uv = m.obs_uv + rng.normal(0, 1.5, m.obs_uv.shape)
    R = np.array([kf.pose.R for kf in m.keyframes])[m.obs_kf]
    t = np.array([kf.pose.t for kf in m.keyframes])[m.obs_kf]
    X0 = X + rng.normal(0, 0.05, X.shape)
    _, _, before, after = refine_points(X0, m.rows_of(m.obs_pid), R, t, uv, K, HuberLoss(2.0), 10)
    assert np.all(after <= before)


@given(seeds)
def test_refine_points_matches_generic_solver(seed):
    rng = np.random.default_rng(seed)
    K, m, X = ba_fixture(rng, n=8)
    uv = m.obs_uv + rng.normal(0, 1.0, m.obs_uv.shape)
    kfR = np.array([kf.pose.R for kf in m.keyframes])
    kft = np.array([kf.pose.t for kf in m.keyframes])
    X0 = X + rng.normal(0, 0.05, X.shape)
    rows = m.rows_of(m.obs_pid)
    got, _, _, _ = refine_points(X0, rows, kfR[m.obs_kf], kft[m.obs_kf], uv, K, HuberLoss(2.0), 50)
    for i in range(len(X)):
        sel = np.flatnonzero(rows == i)
        Rs, ts, us = kfR[m.obs_kf[sel]], kft[m.obs_kf[sel]], uv[sel]

        def residual(x):
            P = Rs @ x + ts
            return (P[:, :2] / P[:, 2:] * K.fx + K.cx - us).ravel()

        def jacobian(x, eps=1e-7):
            return np.column_stack([(residual(x + e) - residual(x - e)) / (2 * eps) for e in np.eye(3) * eps])

        ref = levenberg_marquardt(
            LMProblem(residual, jacobian, X0[i], loss=HuberLoss(2.0), block_size=2), max_iters=50, rel_tol=1e-14
        )
        assert np.linalg.norm(got[i] - ref.x) < 1e-5
