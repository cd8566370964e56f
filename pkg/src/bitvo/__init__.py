"""Binary-edge visual odometry for focal-plane sensor-processor output."""

from .config import RunConfig
from .frame import FeatureFrame
from .geometry import CameraIntrinsics, RigidTransform
from .mapping import VOConfig
from .odometry import VisualOdometry
from .sim import NoiseModel, TrajectoryModel, generate_scene, generate_sequence
from .trajectory import Trajectory
from .tracking import MatchParams

__all__ = [
    "CameraIntrinsics",
    "FeatureFrame",
    "MatchParams",
    "NoiseModel",
    "RigidTransform",
    "RunConfig",
    "Trajectory",
    "TrajectoryModel",
    "VOConfig",
    "VisualOdometry",
    "generate_scene",
    "generate_sequence",
]
