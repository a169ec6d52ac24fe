"""Hemispherical scan plans with constant end and side overlap."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .geometry import HALF_PI, TWO_PI, CameraIntrinsics, ConfigError, SphericalPose

MAX_VIEWS = 10_000


@dataclass
class ScanPlan:
    poses: list
    end_overlap: float
    side_overlap: float
    radius: float
    rings: list = field(default_factory=list)  # views per elevation ring

    def __len__(self):
        return len(self.poses)

    @property
    def metadata(self):
        return {"end_overlap": self.end_overlap, "side_overlap": self.side_overlap, "radius": self.radius}


def angular_step(overlap: float, fov: float) -> float:
    """Angle between neighbouring views on a sphere for the given image overlap.

    Flat-plane footprint 2R tan(fov/2); small-angle spacing footprint (1 - overlap) / R.
    """
    return 2.0 * math.tan(fov / 2.0) * (1.0 - overlap)


def plan_hemisphere(radius: float, end_overlap: float, side_overlap: float, intrinsics: CameraIntrinsics) -> ScanPlan:
    for name, ov in (("end_overlap", end_overlap), ("side_overlap", side_overlap)):
        if not 0.0 <= ov < 1.0 or ov > 0.95:
            raise ConfigError(f"{name} must lie in [0, 0.95], got {ov}")
    along = angular_step(end_overlap, intrinsics.fov_x)
    across = angular_step(side_overlap, intrinsics.fov_y)
    n_gaps = max(1, math.ceil(HALF_PI / across - 1e-9))
    rings = []
    total = 0
    for r in range(n_gaps + 1):
        elev = HALF_PI * r / n_gaps
        if r == n_gaps:
            count = 1
        else:
            count = max(1, math.ceil(TWO_PI * math.cos(elev) / along - 1e-9))
        total += count
        if total > MAX_VIEWS:
            raise ConfigError(f"overlap settings produce more than {MAX_VIEWS} views")
        rings.append((elev, count))
    poses = []
    for r, (elev, count) in enumerate(rings):
        az = [TWO_PI * j / count for j in range(count)]
        if r % 2 == 1:
            az = az[::-1]  # serpentine
        poses.extend(SphericalPose(radius, a, elev) for a in az)
    return ScanPlan(poses, end_overlap, side_overlap, radius, [c for _, c in rings])
