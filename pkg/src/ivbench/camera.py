"""Pinhole camera model with dual axis conventions.

Two conventions coexist in the transport metadata:

* MIV: camera axes x-forward / y-left / z-up. The pose angles build the
  camera-to-world rotation R = Rz(yaw) @ Ry(pitch) @ Rx(roll).
* CV: camera axes x-right / y-down / z-forward, rotation stored as
  world-to-camera. The same angle triple describes the same physical
  orientation; only the matrix semantics change, so converting between
  conventions is exact.

`position` is always the camera center in world coordinates. Pixel
coordinates are continuous with integer pixel centers: pixel (row i,
col j) samples at (u=j, v=i), u right, v down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import ConfigError, DegeneratePoseError

GIMBAL_LOCK_DEG = 89.9

# Basis change from MIV camera axes (x-forward, y-left, z-up) to CV camera
# axes (x-right, y-down, z-forward): right = -left, down = -up, forward = forward.
_MIV_TO_CV = np.array([
    [0.0, -1.0, 0.0],
    [0.0, 0.0, -1.0],
    [1.0, 0.0, 0.0],
])


class Convention(Enum):
    MIV = "MIV"
    CV = "CV"


def parse_convention(tag: str) -> Convention:
    try:
        return Convention(tag)
    except ValueError:
        raise ConfigError(f"unknown camera convention tag {tag!r}") from None


@dataclass(frozen=True)
class Intrinsics:
    focal_x: float
    focal_y: float
    principal_x: float
    principal_y: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.focal_x > 0 and self.focal_y > 0):
            raise ConfigError("focal lengths must be positive")
        if self.width < 8 or self.height < 8:
            raise ConfigError("image dimensions must be >= 8 px")
        if not (0 <= self.principal_x <= self.width and 0 <= self.principal_y <= self.height):
            raise ConfigError("principal point outside image bounds")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([
            [self.focal_x, 0.0, self.principal_x],
            [0.0, self.focal_y, self.principal_y],
            [0.0, 0.0, 1.0],
        ])


@dataclass(frozen=True)
class Pose:
    yaw_deg: float
    pitch_deg: float
    roll_deg: float
    position: tuple[float, float, float]
    convention: Convention = Convention.MIV

    def __post_init__(self):
        vals = (self.yaw_deg, self.pitch_deg, self.roll_deg, *self.position)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("pose angles and position must be finite")


@dataclass(frozen=True)
class CameraParams:
    id: str
    intrinsics: Intrinsics
    pose: Pose


def _euler_zyx(yaw_deg: float, pitch_deg: float, roll_deg: float) -> np.ndarray:
    """Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    y, p, r = (math.radians(a) for a in (yaw_deg, pitch_deg, roll_deg))
    cy, sy = math.cos(y), math.sin(y)
    cp, sp = math.cos(p), math.sin(p)
    cr, sr = math.cos(r), math.sin(r)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def euler_to_rotation(yaw_deg: float, pitch_deg: float, roll_deg: float,
                      convention: Convention = Convention.MIV) -> np.ndarray:
    """Rotation matrix for an angle triple.

    MIV: camera-to-world rotation on MIV camera axes.
    CV: world-to-camera rotation on CV camera axes (same physical orientation).
    """
    if not all(math.isfinite(a) for a in (yaw_deg, pitch_deg, roll_deg)):
        raise ValueError("Euler angles must be finite")
    r = _euler_zyx(yaw_deg, pitch_deg, roll_deg)
    if convention is Convention.MIV:
        return r
    if convention is Convention.CV:
        return _MIV_TO_CV @ r.T
    raise ConfigError(f"unknown convention {convention!r}")


def rotation_to_euler(matrix: np.ndarray, convention: Convention = Convention.MIV
                      ) -> tuple[float, float, float]:
    """Inverse of euler_to_rotation, in degrees. Raises near gimbal lock."""
    m = np.asarray(matrix, dtype=float)
    if m.shape != (3, 3):
        raise ValueError("rotation matrix must be 3x3")
    if not np.allclose(m @ m.T, np.eye(3), atol=1e-9):
        raise ValueError("matrix is not orthonormal")
    if convention is Convention.CV:
        m = (_MIV_TO_CV.T @ m).T
    elif convention is not Convention.MIV:
        raise ConfigError(f"unknown convention {convention!r}")
    sp = -m[2, 0]
    sp = min(1.0, max(-1.0, sp))
    pitch = math.degrees(math.asin(sp))
    if abs(pitch) >= GIMBAL_LOCK_DEG:
        raise DegeneratePoseError(f"pitch {pitch:.3f} deg is within the gimbal-lock guard")
    yaw = math.degrees(math.atan2(m[1, 0], m[0, 0]))
    roll = math.degrees(math.atan2(m[2, 1], m[2, 2]))
    return yaw, pitch, roll


def convert_convention(cam: CameraParams, target: Convention) -> CameraParams:
    """Re-tag a camera in the target convention.

    The angle triple and the camera center are preserved exactly; only the
    interpretation (and hence the matrix euler_to_rotation returns) changes.
    Projection through the converted camera is identical to the original.
    """
    if not isinstance(target, Convention):
        target = parse_convention(target)
    if cam.pose.convention is target:
        return cam
    return replace(cam, pose=replace(cam.pose, convention=target))


def world_to_cv(cam: CameraParams) -> tuple[np.ndarray, np.ndarray]:
    """(R, C): world-to-camera rotation on CV axes and camera center.

    Camera coordinates of world point P are R @ (P - C); the shared
    projection backbone for both conventions.
    """
    pose = cam.pose
    r = euler_to_rotation(pose.yaw_deg, pose.pitch_deg, pose.roll_deg, Convention.CV)
    return r, np.asarray(pose.position, dtype=float)


def project(point: np.ndarray, cam: CameraParams) -> tuple[np.ndarray, float] | None:
    """Pinhole projection. Returns (pixel, depth) or None for points behind the camera.

    Depth is the distance along the camera's forward axis.
    """
    r, c = world_to_cv(cam)
    p = r @ (np.asarray(point, dtype=float) - c)
    z = p[2]
    if z <= 0.0:
        return None
    k = cam.intrinsics
    pixel = np.array([k.principal_x + k.focal_x * p[0] / z,
                      k.principal_y + k.focal_y * p[1] / z])
    return pixel, float(z)


def unproject(pixel: np.ndarray, depth: float, cam: CameraParams) -> np.ndarray:
    """World point at the given pixel and forward-axis depth. Inverse of project."""
    if not depth > 0.0:
        raise ValueError(f"depth must be positive, got {depth}")
    r, c = world_to_cv(cam)
    k = cam.intrinsics
    u, v = float(pixel[0]), float(pixel[1])
    p_cam = np.array([(u - k.principal_x) / k.focal_x * depth,
                      (v - k.principal_y) / k.focal_y * depth,
                      depth])
    return c + r.T @ p_cam


def pixel_rays(cam: CameraParams) -> np.ndarray:
    """(H, W, 3) unit-depth ray directions in world coordinates.

    unproject(pixel, d) == center + d * ray[i, j] for pixel (u=j, v=i).
    """
    r, _ = world_to_cv(cam)
    k = cam.intrinsics
    u = (np.arange(k.width) - k.principal_x) / k.focal_x
    v = (np.arange(k.height) - k.principal_y) / k.focal_y
    dirs = np.empty((k.height, k.width, 3))
    dirs[..., 0] = u[None, :]
    dirs[..., 1] = v[:, None]
    dirs[..., 2] = 1.0
    return dirs @ r  # (R.T @ d) for each d
