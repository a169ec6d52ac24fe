"""Camera poses on the view hemisphere, pinhole intrinsics and look-at transforms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi


class ConfigError(ValueError):
    """Raised for invalid user-facing configuration."""


@dataclass(frozen=True)
class SphericalPose:
    """Camera location {radius, azimuth, elevation} around the scene origin.

    Azimuth is wrapped into [0, 2pi) and elevation clamped to [0, pi/2] on
    construction; every other operation assumes a normalized pose.
    """

    radius: float
    azimuth: float
    elevation: float

    def __post_init__(self):
        if not (self.radius > 0.0) or not math.isfinite(self.radius):
            raise ConfigError(f"radius must be positive, got {self.radius}")
        az = math.fmod(float(self.azimuth), TWO_PI)
        if az < 0.0:
            az += TWO_PI
        if az >= TWO_PI:  # fmod of a tiny negative can round up to 2pi
            az = 0.0
        el = min(max(float(self.elevation), 0.0), HALF_PI)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "azimuth", az)
        object.__setattr__(self, "elevation", el)

    def as_tuple(self):
        return (self.radius, self.azimuth, self.elevation)


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int = 512
    height: int = 512
    focal_length: float = 35.0  # mm
    sensor_width: float = 32.0  # mm
    depth_min: float = 0.05  # m
    depth_max: float = 10.0  # m

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ConfigError("image must be at least 16x16 pixels")
        if not self.focal_length > 0 or not self.sensor_width > 0:
            raise ConfigError("focal length and sensor width must be positive")
        if not 0 < self.depth_min < self.depth_max:
            raise ConfigError("need 0 < depth_min < depth_max")

    @property
    def fx(self) -> float:
        return self.focal_length / self.sensor_width * self.width

    @property
    def fy(self) -> float:
        # square pixels
        return self.fx

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0

    @property
    def fov_x(self) -> float:
        return 2.0 * math.atan(self.sensor_width / (2.0 * self.focal_length))

    @property
    def fov_y(self) -> float:
        return 2.0 * math.atan(self.height / (2.0 * self.fy))

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame ray directions through pixel centers, z component 1. Shape (H, W, 3)."""
        u = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        v = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu, vv, np.ones_like(uu)], axis=-1)


def to_cartesian(pose: SphericalPose) -> np.ndarray:
    r, phi, theta = pose.radius, pose.azimuth, pose.elevation
    return np.array(
        [r * math.cos(theta) * math.cos(phi), r * math.cos(theta) * math.sin(phi), r * math.sin(theta)]
    )


def from_cartesian(point) -> SphericalPose:
    x, y, z = (float(c) for c in point)
    r = math.sqrt(x * x + y * y + z * z)
    return SphericalPose(r, math.atan2(y, x), math.asin(max(-1.0, min(1.0, z / r))))


def look_at_transform(pose: SphericalPose) -> np.ndarray:
    """Camera-to-world 4x4 transform for a camera at `pose` looking at the origin.

    Camera axes follow the x-right, y-down, z-forward convention. The image
    "up" is world +z projected into the image plane; when the camera sits on
    the +z axis that projection vanishes and world +x is used instead.
    """
    center = to_cartesian(pose)
    forward = -center / np.linalg.norm(center)
    right = np.cross(forward, (0.0, 0.0, 1.0))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, (1.0, 0.0, 0.0))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    down /= np.linalg.norm(down)
    T = np.eye(4)
    T[:3, 0] = right
    T[:3, 1] = down
    T[:3, 2] = forward
    T[:3, 3] = center
    return T


def invert_rigid(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def is_rigid(T: np.ndarray, tol: float = 1e-6) -> bool:
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4) or not np.allclose(T[3], (0, 0, 0, 1), atol=tol):
        return False
    R = T[:3, :3]
    return bool(np.allclose(R @ R.T, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) <= tol)


def region_id(pose: SphericalPose, n_regions: int) -> int:
    """Azimuth bin of `pose` among `n_regions` equal-width view ranges."""
    if n_regions < 1:
        raise ConfigError("number of regions must be >= 1")
    idx = int(math.floor(pose.azimuth / (TWO_PI / n_regions)))
    return min(max(idx, 0), n_regions - 1)
