"""Rigid transforms, pinhole projection, triangulation and parallax.

Conventions
-----------
A pose ``T_cw`` maps world points into the camera frame: ``p_c = R p_w + t``.
Rotations are stored as unit quaternions ``(w, x, y, z)``. Image coordinates
have ``u`` pointing right and ``v`` pointing down; the camera looks along +z.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, DegenerateBaseline, DegenerateRay, NonPositiveDepth


# ---------------------------------------------------------------------------
# rotation helpers
# ---------------------------------------------------------------------------


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues' formula: axis-angle vector to rotation matrix."""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    if theta < 1e-8:
        # second-order series keeps the map accurate near zero
        return np.eye(3) + W + 0.5 * (W @ W)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * W + b * (W @ W)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`so3_exp`, returning an axis-angle vector."""
    return quat_to_axis_angle(quat_from_matrix(R))


def rotation_angle(R: np.ndarray) -> float:
    """Angle in radians of a rotation matrix."""
    return float(np.linalg.norm(so3_log(R)))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z) with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_from_axis_angle(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    if theta < 1e-12:
        q = np.array([1.0, 0.5 * omega[0], 0.5 * omega[1], 0.5 * omega[2]])
    else:
        axis = omega / theta
        q = np.concatenate([[np.cos(theta / 2)], np.sin(theta / 2) * axis])
    return q / np.linalg.norm(q)


def quat_to_axis_angle(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    v = q[1:]
    s = float(np.linalg.norm(v))
    if s < 1e-12:
        return 2.0 * v
    theta = 2.0 * np.arctan2(s, q[0])
    return theta * v / s


def euler_zyx_degrees(R: np.ndarray) -> np.ndarray:
    """Intrinsic Z-Y-X angles of ``R``, returned as (roll_x, pitch_y, yaw_z) degrees."""
    pitch = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    roll = np.arctan2(R[2, 1], R[2, 2])
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return np.degrees([roll, pitch, yaw])


def euler_zyx_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Inverse of :func:`euler_zyx_degrees`, angles in radians."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return Rz @ Ry @ Rx


# ---------------------------------------------------------------------------
# rigid transform
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3) stored as a unit quaternion and a translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if n == 0:
            raise ValueError("zero quaternion")
        object.__setattr__(self, "rotation", q / n)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3).copy())

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, R: np.ndarray, t=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(quat_from_matrix(R), t)

    @classmethod
    def from_matrix4(cls, M: np.ndarray) -> "RigidTransform":
        return cls.from_matrix(M[:3, :3], M[:3, 3])

    @classmethod
    def exp(cls, omega, t=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rotation given as an axis-angle vector, plus a translation."""
        return cls(quat_from_axis_angle(omega), t)

    @property
    def R(self) -> np.ndarray:
        # frozen, so the matrix can be cached on first use
        R = self.__dict__.get("_R")
        if R is None:
            R = quat_to_matrix(self.rotation)
            R.flags.writeable = False
            object.__setattr__(self, "_R", R)
        return R

    @property
    def t(self) -> np.ndarray:
        return self.translation

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.translation
        return M

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self * other``: apply ``other`` first, then ``self``."""
        q = quat_multiply(self.rotation, other.rotation)
        t = self.R @ other.translation + self.translation
        return RigidTransform(q, t)

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        qi = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        Ri = self.R.T
        return RigidTransform(qi, -Ri @ self.translation)

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        """Apply to a single point (3,) or a batch (N, 3)."""
        p = np.asarray(p, dtype=float)
        return p @ self.R.T + self.translation

    def center(self) -> np.ndarray:
        """Origin of this frame expressed in the source frame (camera centre for T_cw)."""
        return -self.R.T @ self.translation

    def angle_to(self, other: "RigidTransform") -> float:
        """Rotation angle in radians between two poses."""
        return rotation_angle(self.R.T @ other.R)

    def distance_to(self, other: "RigidTransform") -> float:
        return float(np.linalg.norm(self.translation - other.translation))

    def __repr__(self) -> str:
        q = np.array2string(self.rotation, precision=6)
        t = np.array2string(self.translation, precision=6)
        return f"RigidTransform(q={q}, t={t})"


def transform_point(T: RigidTransform, p: np.ndarray) -> np.ndarray:
    return T.transform_point(p)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def inverse(T: RigidTransform) -> RigidTransform:
    return T.inverse()


# ---------------------------------------------------------------------------
# camera
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 160.0
    fy: float = 160.0
    cx: float = 128.0
    cy: float = 128.0
    width: int = 256
    height: int = 256

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def normalize(self, uv: np.ndarray) -> np.ndarray:
        """Pixel coordinates to normalized image coordinates (x/z, y/z)."""
        uv = np.asarray(uv, dtype=float)
        return np.stack([(uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy], axis=-1)

    def in_bounds(self, uv: np.ndarray, margin: float = 0.0) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return (
            (uv[..., 0] >= margin)
            & (uv[..., 0] <= self.width - 1 - margin)
            & (uv[..., 1] >= margin)
            & (uv[..., 1] <= self.height - 1 - margin)
        )


def project(K: CameraIntrinsics, p_c) -> np.ndarray:
    """Project one camera-frame point to pixels."""
    x, y, z = np.asarray(p_c, dtype=float)
    if not z > 0:
        raise NonPositiveDepth(f"point depth {z} is not positive")
    return np.array([K.fx * x / z + K.cx, K.fy * y / z + K.cy])


def project_points(K: CameraIntrinsics, P_c: np.ndarray):
    """Vectorized projection of (N, 3) camera-frame points.

    Returns ``(uv, valid)`` where ``valid`` marks positive depth. Rows with
    non-positive depth hold NaN.
    """
    P_c = np.asarray(P_c, dtype=float).reshape(-1, 3)
    z = P_c[:, 2]
    valid = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        zi = np.where(valid, 1.0 / np.where(valid, z, 1.0), np.nan)
    uv = np.empty((len(P_c), 2))
    uv[:, 0] = K.fx * P_c[:, 0] * zi + K.cx
    uv[:, 1] = K.fy * P_c[:, 1] * zi + K.cy
    return uv, valid


# ---------------------------------------------------------------------------
# triangulation / parallax
# ---------------------------------------------------------------------------


def triangulate_points(T_a: RigidTransform, T_b: RigidTransform, uv_a, uv_b, K: CameraIntrinsics):
    """Linear (DLT) triangulation of many correspondences at once.

    Returns ``(points_w, depth_ok)`` where ``depth_ok`` flags points with
    positive depth in both cameras. Raises DegenerateBaseline when the two
    camera centres coincide.
    """
    if np.linalg.norm(T_a.center() - T_b.center()) < 1e-9:
        raise DegenerateBaseline("camera centres coincide")
    xa = K.normalize(np.asarray(uv_a, dtype=float).reshape(-1, 2))
    xb = K.normalize(np.asarray(uv_b, dtype=float).reshape(-1, 2))
    Pa = np.hstack([T_a.R, T_a.t[:, None]])
    Pb = np.hstack([T_b.R, T_b.t[:, None]])
    n = len(xa)
    A = np.empty((n, 4, 4))
    A[:, 0] = xa[:, :1] * Pa[2] - Pa[0]
    A[:, 1] = xa[:, 1:] * Pa[2] - Pa[1]
    A[:, 2] = xb[:, :1] * Pb[2] - Pb[0]
    A[:, 3] = xb[:, 1:] * Pb[2] - Pb[1]
    # row scaling does not change the null vector but improves conditioning
    A /= np.linalg.norm(A, axis=2, keepdims=True)
    _, _, Vt = np.linalg.svd(A)
    Xh = Vt[:, -1, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        X = Xh[:, :3] / Xh[:, 3:]
    za = X @ T_a.R[2] + T_a.t[2]
    zb = X @ T_b.R[2] + T_b.t[2]
    ok = np.isfinite(X).all(axis=1) & (za > 0) & (zb > 0)
    return X, ok


def triangulate(T_a: RigidTransform, T_b: RigidTransform, u_a, u_b, K: CameraIntrinsics) -> np.ndarray:
    """Triangulate a single correspondence into the world frame."""
    X, ok = triangulate_points(T_a, T_b, np.reshape(u_a, (1, 2)), np.reshape(u_b, (1, 2)), K)
    if not ok[0]:
        raise BehindCamera("triangulated point is not in front of both cameras")
    return X[0]


def parallax_degrees_many(c_a: np.ndarray, c_b: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Angle at each point of ``P`` (N, 3) subtended by two camera centres."""
    ra = np.asarray(c_a, dtype=float) - P
    rb = np.asarray(c_b, dtype=float) - P
    cross = np.linalg.norm(np.cross(ra, rb), axis=-1)
    dot = np.einsum("ij,ij->i", ra, rb)
    return np.degrees(np.arctan2(cross, dot))


def parallax_degrees(c_a, c_b, p) -> float:
    p = np.asarray(p, dtype=float)
    ra = np.asarray(c_a, dtype=float) - p
    rb = np.asarray(c_b, dtype=float) - p
    if np.linalg.norm(ra) < 1e-12 or np.linalg.norm(rb) < 1e-12:
        raise DegenerateRay("point coincides with a camera centre")
    return float(parallax_degrees_many(c_a, c_b, p[None])[0])
