"""Rigid-body math on SE(3), the pinhole camera, and the image warp.

Twist ordering is translational-first everywhere in this package:
    xi = (vx, vy, vz, wx, wy, wz)   meters, radians

A Pose maps points from its own frame into the parent frame,
X_parent = R @ X + t. Camera poses follow the optical convention
(x right, y down, z forward). Pose increments are applied by left
multiplication, exp(delta) @ pose.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

try:
    from .config import Z_MIN, AMBIGUOUS_ANGLE_MARGIN
    from .errors import AmbiguousRotation, BehindCamera, InvalidDepth, ConfigError
except ImportError:
    from config import Z_MIN, AMBIGUOUS_ANGLE_MARGIN
    from errors import AmbiguousRotation, BehindCamera, InvalidDepth, ConfigError

# Below this angle the Rodrigues coefficients are evaluated by Taylor series.
_SERIES_ANGLE = 1e-3


def skew(w):
    """3x3 cross-product matrix of a 3-vector"""
    wx, wy, wz = float(w[0]), float(w[1]), float(w[2])
    return np.array([
        [0.0, -wz, wy],
        [wz, 0.0, -wx],
        [-wy, wx, 0.0],
    ])


def _rodrigues_coefficients(theta):
    """A = sin(t)/t, B = (1-cos(t))/t^2, C = (t-sin(t))/t^3"""
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        return a, b, c
    s = np.sin(theta)
    half = np.sin(0.5 * theta)
    a = s / theta
    b = 2.0 * half * half / (theta * theta)
    c = (theta - s) / (theta ** 3)
    return a, b, c


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t):
        return cls(np.eye(3), t)

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_quaternion(cls, translation, quat_xyzw):
        """Build from translation and an (x, y, z, w) quaternion, normalised here"""
        q = np.asarray(quat_xyzw, dtype=float)
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or norm < 1e-12:
            raise ValueError(f"Cannot normalise quaternion {q}")
        return cls(Rotation.from_quat(q / norm).as_matrix(), translation)

    def quaternion(self):
        """(x, y, z, w) with w >= 0"""
        q = Rotation.from_matrix(self.rotation).as_quat()
        if q[3] < 0:
            q = -q
        return q

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points):
        """Transform a 3-vector or an (n, 3) batch"""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def __matmul__(self, other):
        return compose(self, other)

    def __repr__(self):
        return f"Pose(t={np.round(self.translation, 6).tolist()}, q={np.round(self.quaternion(), 6).tolist()})"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError(f"Image size must be positive, got {self.width}x{self.height}")

    def matrix(self):
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    def downscaled_mean(self):
        """Intrinsics of an image whose pixels average 2x2 cells of this one"""
        return CameraIntrinsics(
            self.fx / 2.0, self.fy / 2.0,
            (self.cx + 0.5) / 2.0 - 0.5, (self.cy + 0.5) / 2.0 - 0.5,
            self.width // 2, self.height // 2,
        )

    def downscaled_top_left(self):
        """Intrinsics of an image that keeps the top-left pixel of every 2x2 cell"""
        return CameraIntrinsics(
            self.fx / 2.0, self.fy / 2.0,
            self.cx / 2.0, self.cy / 2.0,
            self.width // 2, self.height // 2,
        )

    def at_level(self, level, top_left=False):
        k = self
        for _ in range(level):
            k = k.downscaled_top_left() if top_left else k.downscaled_mean()
        return k


def exp_map(t):
    """SE(3) exponential of a translational-first twist"""
    t = np.asarray(t, dtype=float).reshape(6)
    v, w = t[:3], t[3:]
    theta = float(np.linalg.norm(w))
    a, b, c = _rodrigues_coefficients(theta)
    w_hat = skew(w)
    w_hat2 = w_hat @ w_hat
    rotation = np.eye(3) + a * w_hat + b * w_hat2
    v_mat = np.eye(3) + b * w_hat + c * w_hat2
    return Pose(rotation, v_mat @ v)


def log_map(p):
    """Inverse of exp_map; raises AmbiguousRotation for angles near pi"""
    r = p.rotation
    s = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    sin_theta = float(np.linalg.norm(s))
    cos_theta = 0.5 * (float(np.trace(r)) - 1.0)
    theta = float(np.arctan2(sin_theta, cos_theta))
    if theta >= np.pi - AMBIGUOUS_ANGLE_MARGIN:
        raise AmbiguousRotation(f"Rotation angle {theta:.9f} rad is too close to pi")

    if theta < _SERIES_ANGLE:
        w = s * (1.0 + theta * theta / 6.0)
    else:
        w = s * (theta / sin_theta)

    w_hat = skew(w)
    if theta < _SERIES_ANGLE:
        coeff = 1.0 / 12.0 + theta * theta / 720.0
    else:
        a, b, _ = _rodrigues_coefficients(theta)
        coeff = (1.0 - a / (2.0 * b)) / (theta * theta)
    v_inv = np.eye(3) - 0.5 * w_hat + coeff * (w_hat @ w_hat)
    return np.concatenate([v_inv @ p.translation, w])


def compose(a, b):
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(a):
    rt = a.rotation.T
    return Pose(rt, -(rt @ a.translation))


def boxminus(a, b):
    """a [-] b = log(b^-1 a)"""
    return log_map(compose(inverse(b), a))


def adjoint(p):
    """6x6 adjoint: p exp(xi) p^-1 = exp(adjoint(p) @ xi)"""
    out = np.zeros((6, 6))
    out[:3, :3] = p.rotation
    out[:3, 3:] = skew(p.translation) @ p.rotation
    out[3:, 3:] = p.rotation
    return out


def twist_hat(t):
    """6x6 matrix ad(xi) of a twist (the small adjoint)"""
    t = np.asarray(t, dtype=float).reshape(6)
    out = np.zeros((6, 6))
    out[:3, :3] = skew(t[3:])
    out[:3, 3:] = skew(t[:3])
    out[3:, 3:] = skew(t[3:])
    return out


def left_jacobian_inverse(t):
    """Series approximation of the inverse left Jacobian, exact to second order"""
    ad = twist_hat(t)
    return np.eye(6) - 0.5 * ad + (ad @ ad) / 12.0


def project_many(k, points, z_min=Z_MIN):
    """Project (n, 3) camera points; returns (n, 2) pixels and the in-front mask"""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    z = p[:, 2]
    valid = z > z_min
    safe_z = np.where(valid, z, 1.0)
    uv = np.empty((p.shape[0], 2))
    uv[:, 0] = k.fx * p[:, 0] / safe_z + k.cx
    uv[:, 1] = k.fy * p[:, 1] / safe_z + k.cy
    return uv, valid


def project(k, point, z_min=Z_MIN):
    uv, valid = project_many(k, np.asarray(point, dtype=float).reshape(1, 3), z_min)
    if not valid[0]:
        raise BehindCamera(f"Point {np.asarray(point).tolist()} is not in front of the camera (z_min={z_min})")
    return uv[0]


def unproject_many(k, pixels, depths):
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    d = np.asarray(depths, dtype=float).reshape(-1)
    out = np.empty((px.shape[0], 3))
    out[:, 0] = (px[:, 0] - k.cx) / k.fx * d
    out[:, 1] = (px[:, 1] - k.cy) / k.fy * d
    out[:, 2] = d
    return out


def unproject(k, pixel, depth):
    if not depth > 0:
        raise InvalidDepth(f"Depth must be positive, got {depth}")
    return unproject_many(k, pixel, [depth])[0]


def warp_many(k, rel, pixels, depths, k_target=None, z_min=Z_MIN):
    """Warp pixels with known depth through rel; returns pixels, mask, warped points"""
    kt = k if k_target is None else k_target
    points = rel.apply(unproject_many(k, pixels, depths))
    uv, valid = project_many(kt, points, z_min)
    return uv, valid, points


def warp(k, rel, pixel, depth, k_target=None, z_min=Z_MIN):
    if not depth > 0:
        raise InvalidDepth(f"Depth must be positive, got {depth}")
    uv, valid, points = warp_many(k, rel, pixel, [depth], k_target, z_min)
    if not valid[0]:
        raise BehindCamera(f"Warped point {points[0].tolist()} is behind the camera")
    return uv[0]


def pixel_jacobian_many(k, points):
    """d(pixel)/d(delta) of (n, 3) camera points moved by exp(delta) -> (n, 2, 6)"""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    inv_z = 1.0 / z
    xz = x * inv_z
    yz = y * inv_z
    out = np.zeros((points.shape[0], 2, 6))
    out[:, 0, 0] = k.fx * inv_z
    out[:, 0, 2] = -k.fx * xz * inv_z
    out[:, 0, 3] = -k.fx * xz * yz
    out[:, 0, 4] = k.fx * (1.0 + xz * xz)
    out[:, 0, 5] = -k.fx * yz
    out[:, 1, 1] = k.fy * inv_z
    out[:, 1, 2] = -k.fy * yz * inv_z
    out[:, 1, 3] = -k.fy * (1.0 + yz * yz)
    out[:, 1, 4] = k.fy * xz * yz
    out[:, 1, 5] = k.fy * xz
    return out


def warp_jacobian_many(k, rel, pixels, depths, k_target=None, z_min=Z_MIN):
    """Jacobian of the warped pixel w.r.t. a left increment exp(delta) @ rel -> (n, 2, 6)"""
    kt = k if k_target is None else k_target
    _, valid, points = warp_many(k, rel, pixels, depths, kt, z_min)
    safe = points.copy()
    safe[~valid, 2] = 1.0
    return pixel_jacobian_many(kt, safe), valid


def warp_jacobian(k, rel, pixel, depth, k_target=None, z_min=Z_MIN):
    if not depth > 0:
        raise InvalidDepth(f"Depth must be positive, got {depth}")
    jac, valid = warp_jacobian_many(k, rel, pixel, [depth], k_target, z_min)
    if not valid[0]:
        raise BehindCamera("Warped point is behind the camera")
    return jac[0]


def random_pose_offset(max_translation, max_rotation_deg, rng):
    """Random rigid offset with |t| <= max_translation and angle <= max_rotation_deg"""
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    trans = direction * rng.uniform(0.0, max_translation)
    angle = np.deg2rad(rng.uniform(0.0, max_rotation_deg))
    return Pose(Rotation.from_rotvec(axis * angle).as_matrix(), trans)


def rotation_angle(rotation):
    """Geodesic angle of a rotation matrix, radians"""
    cos_theta = np.clip(0.5 * (np.trace(rotation) - 1.0), -1.0, 1.0)
    r = rotation
    s = 0.5 * np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return float(np.arctan2(s, cos_theta))
