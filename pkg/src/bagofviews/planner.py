"""Appearance-driven NBV environment (reset/step) and a greedy candidate-scoring planner.

The state holds the last tau down-sampled grayscale frames and their normalized
poses. An action in [-1, 1]^3 is rescaled to (radius, azimuth advance,
elevation); the azimuth always moves forward so an episode is one pass around
the target. The reward is the change of the visited range's vocabulary minus
one per step.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy.stats import qmc

from .bov import BagOfViews, BovConfig, update_vocabulary, view_utility, vocabulary_change
from .features import SiftExtractor, to_grayscale
from .geometry import HALF_PI, TWO_PI, CameraIntrinsics, ConfigError, SphericalPose, look_at_transform
from .renderer import Scene, render


@dataclass(frozen=True)
class EnvConfig:
    bov: BovConfig = field(default_factory=BovConfig)
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    radius_min: float = 2.3
    radius_max: float = 2.8
    dphi_min: float = math.radians(5.0)
    dphi_max: float = math.radians(60.0)
    elevation_max: float = math.radians(70.0)
    obs_size: int = 64
    tau: int = 5
    r_max: float = 1.0
    start: SphericalPose | None = SphericalPose(2.5, 0.0, math.radians(30.0))

    def __post_init__(self):
        if not 0 < self.radius_min <= self.radius_max:
            raise ConfigError("need 0 < radius_min <= radius_max")
        if not 0 < self.dphi_min <= self.dphi_max:
            raise ConfigError("need 0 < dphi_min <= dphi_max")
        if not 0 <= self.elevation_max <= HALF_PI:
            raise ConfigError("elevation_max must lie in [0, pi/2]")
        if self.tau < 1 or self.obs_size < 4:
            raise ConfigError("tau >= 1 and obs_size >= 4 required")


@dataclass
class EnvState:
    obs_history: np.ndarray  # (tau, s, s) uint8
    pose_history: np.ndarray  # (tau, 3) in [0, 1]

    def __eq__(self, other):
        return (
            isinstance(other, EnvState)
            and np.array_equal(self.obs_history, other.obs_history)
            and np.array_equal(self.pose_history, other.pose_history)
        )


@dataclass
class EpisodeRecord:
    poses: list = field(default_factory=list)  # start pose + one per step
    rewards: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    regions: list = field(default_factory=list)
    cumulative_azimuth: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.rewards)

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))

    def log_lines(self) -> list:
        lines = []
        for i, pose in enumerate(self.poses):
            lines.append(json.dumps({
                "step": i,
                "pose": {"radius_m": pose.radius, "azimuth_rad": pose.azimuth, "elevation_rad": pose.elevation},
                "reward": None if i == 0 else self.rewards[i - 1],
                "accepted": self.accepted[i],
                "region_id": self.regions[i],
                "cumulative_azimuth": self.cumulative_azimuth[i],
            }, sort_keys=True))
        return lines

    def write(self, path) -> None:
        with open(path, "w") as f:
            f.write("\n".join(self.log_lines()) + "\n")

    @classmethod
    def read(cls, path) -> "EpisodeRecord":
        rec = cls()
        with open(path) as f:
            for line in f:
                if not line.strip():
                    continue
                d = json.loads(line)
                p = d["pose"]
                rec.poses.append(SphericalPose(p["radius_m"], p["azimuth_rad"], p["elevation_rad"]))
                if d["reward"] is not None:
                    rec.rewards.append(d["reward"])
                rec.accepted.append(d["accepted"])
                rec.regions.append(d["region_id"])
                rec.cumulative_azimuth.append(d["cumulative_azimuth"])
        return rec


def downsample(gray: np.ndarray, size: int) -> np.ndarray:
    return np.asarray(Image.fromarray(gray).resize((size, size), Image.BOX), dtype=np.uint8)


class NbvEnv:
    """reset()/step() environment around a fixed scene.

    Each captured view (the start view included) is rendered, its features
    extracted and folded into the vocabulary of its azimuth range.
    """

    def __init__(self, scene: Scene, config: EnvConfig | None = None, extractor=None, keep_snapshots: bool = False):
        self.scene = scene
        self.config = config or EnvConfig()
        self.extractor = extractor or SiftExtractor()
        self.keep_snapshots = keep_snapshots
        self._feature_cache = {}

    # ---- helpers
    def rescale(self, action) -> tuple:
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(3), -1.0, 1.0)
        c = self.config
        f = (a + 1.0) / 2.0
        radius = c.radius_min + f[0] * (c.radius_max - c.radius_min)
        advance = c.dphi_min + f[1] * (c.dphi_max - c.dphi_min)
        elevation = f[2] * c.elevation_max
        return float(radius), float(advance), float(elevation)

    def normalize_pose(self, pose: SphericalPose) -> np.ndarray:
        c = self.config
        span = c.radius_max - c.radius_min
        r = (pose.radius - c.radius_min) / span if span > 0 else 0.0
        return np.clip([r, pose.azimuth / TWO_PI, pose.elevation / HALF_PI], 0.0, 1.0)

    def capture(self, pose: SphericalPose):
        out = render(self.scene, pose, self.config.intrinsics)
        gray = to_grayscale(out.rgb)
        key = pose.as_tuple()
        ds = self._feature_cache.get(key)
        if ds is None:
            ds = self.extractor(gray)
            self._feature_cache[key] = ds
        return out, gray, ds

    def _descriptors(self, pose):
        key = pose.as_tuple()
        if key not in self._feature_cache:
            self.capture(pose)
        return self._feature_cache[key]

    def _reward(self, region, ds):
        before = self.bov.vocabularies[region]
        after = update_vocabulary(before, ds, self.config.bov)
        change = vocabulary_change(after, before, self.config.bov.distance_coefficient)
        reward = self.config.r_max if math.isinf(change) else change - 1.0
        return reward, before, after

    def next_pose(self, action) -> tuple:
        radius, advance, elevation = self.rescale(action)
        return SphericalPose(radius, self.pose.azimuth + advance, elevation), advance

    # ---- environment surface
    def reset(self, seed: int | None = None) -> EnvState:
        c = self.config
        if c.start is not None:
            start = c.start
        else:
            rng = np.random.default_rng(seed)
            start = SphericalPose(
                rng.uniform(c.radius_min, c.radius_max), rng.uniform(0, TWO_PI), rng.uniform(0, c.elevation_max)
            )
        self.pose = start
        self.cumulative = 0.0
        self.done = False
        self.bov = BagOfViews(c.bov)
        self._feature_cache = {}
        self.captured = []
        self.snapshots = []
        out, gray, ds = self.capture(start)
        region = self.bov.region_of(start)
        self.bov.update(region, ds)
        self.captured.append((start, out))
        self.record = EpisodeRecord([start], [], [True], [region], [0.0])
        self._obs = [downsample(gray, c.obs_size)] * c.tau
        self._poses = [self.normalize_pose(start)] * c.tau
        return self.state

    @property
    def state(self) -> EnvState:
        return EnvState(np.stack(self._obs), np.stack(self._poses))

    def prospective_reward(self, action) -> float:
        """Reward `action` would earn from the current state, without committing."""
        pose, _ = self.next_pose(action)
        region = self.bov.region_of(pose)
        if self.bov.vocabularies[region].is_empty:
            return self.config.r_max
        reward, _, _ = self._reward(region, self._descriptors(pose))
        return reward

    def step(self, action):
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        pose, advance = self.next_pose(action)
        out, gray, ds = self.capture(pose)
        region = self.bov.region_of(pose)
        accepted = view_utility(ds, self.bov.vocabularies[region], self.config.bov.distance_coefficient) > 0
        reward, before, after = self._reward(region, ds)
        self.bov.vocabularies[region] = after
        if self.keep_snapshots:
            self.snapshots.append((region, before.words.copy(), after.words.copy()))
        self.pose = pose
        self.cumulative += advance
        self.done = self.cumulative >= TWO_PI
        self.captured.append((pose, out))
        self._obs = self._obs[1:] + [downsample(gray, self.config.obs_size)]
        self._poses = self._poses[1:] + [self.normalize_pose(pose)]
        r = self.record
        r.poses.append(pose)
        r.rewards.append(float(reward))
        r.accepted.append(bool(accepted))
        r.regions.append(region)
        r.cumulative_azimuth.append(self.cumulative)
        self._feature_cache = {pose.as_tuple(): ds}
        return self.state, float(reward), self.done, {"region": region, "accepted": bool(accepted)}


def greedy_nbv(env: NbvEnv, candidates_per_step: int = 16, budget: int | None = None, seed: int = 0) -> EpisodeRecord:
    """Commit, at every step, the best-scoring of `candidates_per_step` quasi-random actions.

    `budget` caps the number of captured views (start view included).
    """
    if candidates_per_step < 1:
        raise ConfigError("candidates_per_step must be >= 1")
    env.reset(seed)
    sampler = qmc.Halton(d=3, scramble=True, seed=seed)
    while not env.done and (budget is None or len(env.captured) < budget):
        cands = sampler.random(candidates_per_step) * 2.0 - 1.0
        if candidates_per_step == 1:
            best = 0
        else:
            scores = [env.prospective_reward(a) for a in cands]
            best = int(np.argmax(scores))
        env.step(cands[best])
    return env.record
