"""TUM-format trajectory files: ``timestamp tx ty tz qx qy qz qw`` per line."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import RigidTransform
from .trajectory import Trajectory


def format_pose_line(t: float, pose: RigidTransform) -> str:
    w, x, y, z = pose.rotation
    tx, ty, tz = pose.translation
    vals = " ".join(f"{v:.12f}" for v in (tx, ty, tz, x, y, z, w))
    return f"{t:.9f} {vals}"


def dumps_tum(traj: Trajectory) -> str:
    return "".join(format_pose_line(t, p) + "\n" for t, p in traj)


def loads_tum(text: str, source: str = "<string>") -> Trajectory:
    traj = Trajectory()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ValueError(f"{source}:{lineno}: expected 8 values, got {len(parts)}")
        try:
            v = [float(p) for p in parts]
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
        q = np.array([v[7], v[4], v[5], v[6]])
        traj.append(v[0], RigidTransform(q, v[1:4]))
    return traj


def write_tum(path, traj: Trajectory) -> None:
    Path(path).write_text(dumps_tum(traj))


def read_tum(path) -> Trajectory:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"trajectory file not found: {path}")
    return loads_tum(path.read_text(), str(path))
