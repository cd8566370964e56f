"""Timestamped pose sequences.

Poses in a :class:`Trajectory` are camera-to-world transforms ``T_wc``: the
translation is the camera centre in the world frame. This matches the TUM
text format used for trajectory files. The odometry works internally with
``T_cw`` and inverts on output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import RigidTransform


@dataclass
class Trajectory:
    timestamps: list = field(default_factory=list)
    poses: list = field(default_factory=list)

    def __post_init__(self):
        self.timestamps = [float(t) for t in self.timestamps]
        self.poses = list(self.poses)
        if len(self.timestamps) != len(self.poses):
            raise ValueError("timestamps and poses differ in length")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def append(self, timestamp: float, pose: RigidTransform) -> None:
        if self.timestamps and timestamp <= self.timestamps[-1]:
            raise ValueError(f"timestamp {timestamp} is not after {self.timestamps[-1]}")
        self.timestamps.append(float(timestamp))
        self.poses.append(pose)

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.timestamps, self.poses))

    def times(self) -> np.ndarray:
        return np.asarray(self.timestamps, dtype=float)

    def positions(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3))
        return np.array([p.translation for p in self.poses])

    def rotations(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3, 3))
        return np.array([p.R for p in self.poses])

    def length(self) -> float:
        """Summed length of the position polyline in metres."""
        P = self.positions()
        if len(P) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(P, axis=0), axis=1).sum())
