"""Flat run configuration shared by every CLI verb, loadable from YAML."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields

import yaml

from .bov import BovConfig
from .geometry import CameraIntrinsics, ConfigError, SphericalPose
from .planner import EnvConfig
from .renderer import SceneSpec


@dataclass
class RunConfig:
    # scene
    scene_generator: str = "tower"
    scene_seed: int = 1
    scene_params: dict = field(default_factory=dict)
    # camera
    width: int = 512
    height: int = 512
    focal_length: float = 35.0
    sensor_width: float = 32.0
    depth_min: float = 0.05
    depth_max: float = 10.0
    # hemisphere scan (defaults give the 288-view baseline)
    radius: float = 2.4
    end_overlap: float = 0.77
    side_overlap: float = 0.87
    # bag of views
    n_regions: int = 9
    words: int = 30
    distance_coefficient: float = 2.0
    kmeans_seed: int = 0
    kmeans_max_iters: int = 100
    pool_cap: int | None = None
    # nbv environment / planner
    obs_size: int = 64
    tau: int = 5
    candidates_per_step: int = 16
    budget: int | None = None
    radius_min: float = 2.3
    radius_max: float = 2.8
    dphi_min_deg: float = 5.0
    dphi_max_deg: float = 60.0
    elevation_max_deg: float = 70.0
    r_max: float = 1.0
    start_radius: float = 2.5
    start_azimuth_deg: float = 0.0
    start_elevation_deg: float = 30.0
    random_start: bool = False
    nbv_seed: int = 0
    # reconstruction / metrics
    voxels: int = 256
    truncation_voxels: float = 5.0
    volume_scale: float = 2.2
    eps: float | None = None  # meters; default 2 * voxel size
    # sweep grid
    sweep_regions: list = field(default_factory=lambda: [5, 7, 9, 11])
    sweep_words: list = field(default_factory=lambda: [10, 20, 30])

    def __post_init__(self):
        # building each module config runs its own validation
        self.scene_spec()
        self.intrinsics()
        self.bov_config()
        self.env_config()
        if self.voxels < 8 or self.truncation_voxels <= 0 or self.volume_scale <= 0:
            raise ConfigError("invalid volume settings")
        if self.candidates_per_step < 1:
            raise ConfigError("candidates_per_step must be >= 1")
        if self.budget is not None and self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if not (0 <= self.end_overlap <= 0.95 and 0 <= self.side_overlap <= 0.95):
            raise ConfigError("overlaps must lie in [0, 0.95]")

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(self.scene_generator, dict(self.scene_params))

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.width, self.height, self.focal_length, self.sensor_width, self.depth_min, self.depth_max)

    def bov_config(self, **override) -> BovConfig:
        kw = dict(
            n_regions=self.n_regions, words=self.words, distance_coefficient=self.distance_coefficient,
            kmeans_seed=self.kmeans_seed, kmeans_max_iters=self.kmeans_max_iters, pool_cap=self.pool_cap,
        )
        kw.update(override)
        return BovConfig(**kw)

    def env_config(self) -> EnvConfig:
        start = None if self.random_start else SphericalPose(
            self.start_radius, math.radians(self.start_azimuth_deg), math.radians(self.start_elevation_deg)
        )
        return EnvConfig(
            bov=self.bov_config(), intrinsics=self.intrinsics(),
            radius_min=self.radius_min, radius_max=self.radius_max,
            dphi_min=math.radians(self.dphi_min_deg), dphi_max=math.radians(self.dphi_max_deg),
            elevation_max=math.radians(self.elevation_max_deg),
            obs_size=self.obs_size, tau=self.tau, r_max=self.r_max, start=start,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    data = {}
    if path:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**data)
