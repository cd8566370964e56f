"""Shared fixtures-by-function for the test modules."""

import numpy as np

from bitvo.geometry import RigidTransform


def random_pose(rng, max_angle=np.pi, max_t=1.0) -> RigidTransform:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return RigidTransform.exp(axis * rng.uniform(0, max_angle), rng.uniform(-max_t, max_t, 3))


def points_in_view(rng, n, depth=(2.0, 6.0), half_fov=0.6):
    """Camera-frame points spread over the image."""
    z = rng.uniform(*depth, n)
    x = rng.uniform(-half_fov, half_fov, n) * z
    y = rng.uniform(-half_fov, half_fov, n) * z
    return np.column_stack([x, y, z])
