"""Frames, rigid transforms, rays and pinhole camera models.

Conventions used throughout the package:
  * world frame: x east, y north, z up, ground plane z = 0
  * camera frame: +z boresight, +x right in image, +y down in image
  * planar pose: (x, y, heading), heading CCW from +x, normalized to (-pi, pi]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_ORTHO_TOL = 1e-9


class FovOutOfRangeError(ValueError):
    pass


class PixelOutOfBoundsError(ValueError):
    pass


class BehindCameraError(ValueError):
    pass


def vec3(x, y, z):
    """3-vector in meters (or unitless for directions)."""
    v = np.array([x, y, z], dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("vec3 components must be finite")
    return v


def normalize_angle(a):
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0

    def __post_init__(self):
        self.heading = normalize_angle(self.heading)

    def copy(self):
        return Pose2D(self.x, self.y, self.heading)


@dataclass
class Transform3D:
    """Rigid transform: p_out = rotation @ p_in + translation."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"rotation is not orthonormal (max error {err:.3e})")
        if abs(np.linalg.det(self.rotation) - 1.0) > 1e-6:
            raise ValueError("rotation must have det +1")

    @staticmethod
    def identity():
        return Transform3D()

    @staticmethod
    def from_translation(x, y, z):
        return Transform3D(translation=np.array([x, y, z], dtype=float))

    @staticmethod
    def from_yaw(yaw, translation=(0.0, 0.0, 0.0)):
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Transform3D(translation=np.asarray(translation, dtype=float), rotation=rot)


@dataclass
class UnitRay:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        self.direction = np.asarray(self.direction, dtype=float).reshape(3)
        n = np.linalg.norm(self.direction)
        if abs(n - 1.0) > _ORTHO_TOL:
            if n == 0.0:
                raise ValueError("ray direction must be nonzero")
            self.direction = self.direction / n


@dataclass(frozen=True)
class PinholeIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


def intrinsics_from_fov(width, height, hfov, vfov):
    """Pinhole intrinsics from image size and horizontal/vertical FOV (radians).

    Principal point sits at the pixel-center midpoint ((w-1)/2, (h-1)/2).
    """
    if not (0.0 < hfov < math.pi) or not (0.0 < vfov < math.pi):
        raise FovOutOfRangeError(f"FOV must be in (0, pi), got hfov={hfov}, vfov={vfov}")
    if width < 2 or height < 2:
        raise ValueError("image must be at least 2x2 pixels")
    fx = (width / 2.0) / math.tan(hfov / 2.0)
    fy = (height / 2.0) / math.tan(vfov / 2.0)
    return PinholeIntrinsics(int(width), int(height), fx, fy, (width - 1) / 2.0, (height - 1) / 2.0)


def backproject_pixel(intr, u, v):
    """Ray through pixel (u, v), expressed in the camera frame."""
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise PixelOutOfBoundsError(f"pixel ({u}, {v}) outside {intr.width}x{intr.height} image")
    d = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    return UnitRay(origin=np.zeros(3), direction=d / np.linalg.norm(d))


def project_point(intr, p):
    """Project a camera-frame point to pixel coordinates (u, v)."""
    p = np.asarray(p, dtype=float)
    if p[2] <= 0.0:
        raise BehindCameraError(f"point has non-positive depth z={p[2]}")
    u = intr.fx * p[0] / p[2] + intr.cx
    v = intr.fy * p[1] / p[2] + intr.cy
    return u, v


def pixel_ray_grid(intr):
    """Unit direction for every pixel center, shape (height, width, 3).

    Rows index v, columns index u; used by the renderers to cast all rays at once.
    """
    us = np.arange(intr.width, dtype=float)
    vs = np.arange(intr.height, dtype=float)
    xs = (us - intr.cx) / intr.fx
    ys = (vs - intr.cy) / intr.fy
    gx, gy = np.meshgrid(xs, ys)
    dirs = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return dirs


def compose(a, b):
    """Transform equivalent to applying b first, then a."""
    return Transform3D(
        translation=a.rotation @ b.translation + a.translation,
        rotation=a.rotation @ b.rotation,
    )


def invert(a):
    rot = a.rotation.T
    return Transform3D(translation=-(rot @ a.translation), rotation=rot)


def apply(a, p):
    return a.rotation @ np.asarray(p, dtype=float) + a.translation


def apply_ray(a, r):
    return UnitRay(origin=apply(a, r.origin), direction=a.rotation @ r.direction)


def camera_pose(position, yaw, pitch=0.0):
    """Camera-to-world transform for a camera at `position` with horizontal yaw
    and upward pitch of the boresight. Camera x stays horizontal (right), y points
    down-ish, z along the boresight."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    z_axis = np.array([cy * cp, sy * cp, sp])
    x_axis = np.array([sy, -cy, 0.0])
    y_axis = np.cross(z_axis, x_axis)
    rot = np.column_stack([x_axis, y_axis, z_axis])
    return Transform3D(translation=np.asarray(position, dtype=float), rotation=rot)
