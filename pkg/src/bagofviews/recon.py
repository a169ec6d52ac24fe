"""Projective TSDF fusion of posed RGB-D views and iso-surface extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates
from skimage.measure import marching_cubes

from .geometry import CameraIntrinsics, ConfigError


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (F, 3) int
    colors: np.ndarray  # (V, 3) uint8

    def __len__(self):
        return len(self.vertices)


@dataclass
class PointCloud:
    points: np.ndarray  # (P, 3)
    colors: np.ndarray = field(default=None)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.colors is None:
            self.colors = np.full((len(self.points), 3), 255, np.uint8)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)

    def __len__(self):
        return len(self.points)


class TsdfVolume:
    """Voxel grid with tsdf in [-1, 1] (init 1), observation weights and mean colors."""

    def __init__(self, origin, voxel_size: float, dims, truncation: float | None = None):
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.voxel_size = float(voxel_size)
        self.dims = tuple(int(d) for d in dims)
        if self.voxel_size <= 0 or min(self.dims) < 2:
            raise ConfigError("voxel_size must be positive and every dim >= 2")
        self.truncation = float(truncation) if truncation is not None else 5.0 * self.voxel_size
        self.tsdf = np.ones(self.dims, dtype=np.float32)
        self.weight = np.zeros(self.dims, dtype=np.float32)
        self.color = np.zeros(self.dims + (3,), dtype=np.float32)

    @classmethod
    def around_scene(cls, bounding_radius: float, voxels: int = 256, truncation_voxels: float = 5.0, scale: float = 2.2):
        """Cube of side scale * bounding radius centered at the origin."""
        side = scale * bounding_radius
        vs = side / voxels
        return cls(origin=(-side / 2,) * 3, voxel_size=vs, dims=(voxels,) * 3, truncation=truncation_voxels * vs)

    def voxel_centers(self, i0: int = 0, i1: int | None = None) -> np.ndarray:
        i1 = self.dims[0] if i1 is None else i1
        ii, jj, kk = np.meshgrid(np.arange(i0, i1), np.arange(self.dims[1]), np.arange(self.dims[2]), indexing="ij")
        idx = np.stack([ii, jj, kk], axis=-1).astype(np.float64)
        return self.origin + (idx + 0.5) * self.voxel_size

    def integrate(self, rgb, depth, intrinsics: CameraIntrinsics, camera_to_world: np.ndarray, slab: int = 16):
        depth = np.asarray(depth, dtype=np.float64)
        rgb = np.asarray(rgb)
        H, W = intrinsics.height, intrinsics.width
        if depth.shape != (H, W) or rgb.shape[:2] != (H, W):
            raise ValueError(f"image size {depth.shape} does not match intrinsics {(H, W)}")
        R = camera_to_world[:3, :3]
        C = camera_to_world[:3, 3]
        for i0 in range(0, self.dims[0], slab):
            i1 = min(i0 + slab, self.dims[0])
            pts = self.voxel_centers(i0, i1).reshape(-1, 3)
            cam = (pts - C) @ R
            z = cam[:, 2]
            zs = np.where(z > 1e-9, z, 1.0)
            u = np.floor(intrinsics.fx * cam[:, 0] / zs + intrinsics.cx).astype(np.int64)
            v = np.floor(intrinsics.fy * cam[:, 1] / zs + intrinsics.cy).astype(np.int64)
            ok = (z > 1e-9) & (u >= 0) & (u < W) & (v >= 0) & (v < H)
            d = np.zeros(len(pts))
            d[ok] = depth[v[ok], u[ok]]
            ok &= d > 0
            sdf = d - z
            ok &= sdf >= -self.truncation
            if not ok.any():
                continue
            sel = np.nonzero(ok)[0]
            obs = np.clip(sdf[sel] / self.truncation, -1.0, 1.0).astype(np.float32).astype(np.float64)
            t = self.tsdf[i0:i1].reshape(-1)
            w = self.weight[i0:i1].reshape(-1)
            c = self.color[i0:i1].reshape(-1, 3)
            w_old = w[sel].astype(np.float64)
            w_new = w_old + 1.0
            t[sel] = (t[sel].astype(np.float64) * w_old + obs) / w_new
            c[sel] = (c[sel] * w_old[:, None] + rgb[v[sel], u[sel]].astype(np.float64)) / w_new[:, None]
            w[sel] = w_new
        return self

    def index_to_world(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=np.float64) + 0.5) * self.voxel_size

    def sample_color(self, points) -> np.ndarray:
        idx = (np.asarray(points) - self.origin) / self.voxel_size - 0.5
        cols = [map_coordinates(self.color[..., ch], idx.T, order=1, mode="nearest") for ch in range(3)]
        return np.clip(np.rint(np.stack(cols, axis=-1)), 0, 255).astype(np.uint8)

    def extract_mesh(self) -> TriangleMesh:
        observed = self.weight > 0
        # a cube is meshed only when all 8 corners were observed
        cube = observed[:-1, :-1, :-1].copy()
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    cube &= observed[dx:dx + self.dims[0] - 1, dy:dy + self.dims[1] - 1, dz:dz + self.dims[2] - 1]
        # skimage keys each cube by its upper corner
        mask = np.zeros(self.dims, dtype=bool)
        mask[1:, 1:, 1:] = cube
        empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64), np.zeros((0, 3), np.uint8))
        if not cube.any():
            return empty
        t = self.tsdf
        if t[mask].min() > 0 or t[mask].max() < 0:
            return empty
        try:
            verts, faces, _, _ = marching_cubes(t, level=0.0, mask=mask, allow_degenerate=False)
        except (ValueError, RuntimeError):
            return empty
        if len(verts) == 0:
            return empty
        world = self.index_to_world(verts)
        return TriangleMesh(world, faces.astype(np.int64), self.sample_color(world))

    def extract_pointcloud(self) -> PointCloud:
        """One point per observed voxel with tsdf >= 0 next to an observed negative voxel."""
        t, obs = self.tsdf, self.weight > 0
        best_frac = np.full(self.dims, np.inf)
        best_axis = np.full(self.dims, -1, dtype=np.int64)
        best_dir = np.zeros(self.dims, dtype=np.int64)
        for axis in range(3):
            for step in (1, -1):
                nb_t = np.roll(t, -step, axis=axis)
                nb_o = np.roll(obs, -step, axis=axis)
                valid = np.ones(self.dims, dtype=bool)
                sl = [slice(None)] * 3
                sl[axis] = slice(-1, None) if step == 1 else slice(0, 1)
                valid[tuple(sl)] = False  # no wrap-around
                cross = valid & obs & nb_o & (t >= 0) & (nb_t < 0)
                frac = np.where(cross, t / np.where(cross, t - nb_t, 1.0), np.inf)
                better = frac < best_frac
                best_frac = np.where(better, frac, best_frac)
                best_axis = np.where(better, axis, best_axis)
                best_dir = np.where(better, step, best_dir)
        sel = np.nonzero(best_axis >= 0)
        if len(sel[0]) == 0:
            return PointCloud(np.zeros((0, 3)), np.zeros((0, 3), np.uint8))
        idx = np.stack(sel, axis=-1).astype(np.float64)
        offs = np.zeros_like(idx)
        offs[np.arange(len(idx)), best_axis[sel]] = best_dir[sel] * best_frac[sel]
        pts = self.index_to_world(idx + offs)
        cols = np.clip(np.rint(self.color[sel]), 0, 255).astype(np.uint8)
        return PointCloud(pts, cols)


def integrate(volume: TsdfVolume, rgb, depth, intrinsics, camera_to_world) -> TsdfVolume:
    return volume.integrate(rgb, depth, intrinsics, camera_to_world)


def extract_mesh(volume: TsdfVolume) -> TriangleMesh:
    return volume.extract_mesh()


def extract_pointcloud(volume: TsdfVolume) -> PointCloud:
    return volume.extract_pointcloud()


def write_sphere_sdf(volume: TsdfVolume, radius: float, center=(0.0, 0.0, 0.0)) -> TsdfVolume:
    """Fill the volume with the truncated SDF of a sphere (all voxels observed once)."""
    for i0 in range(0, volume.dims[0], 16):
        i1 = min(i0 + 16, volume.dims[0])
        p = volume.voxel_centers(i0, i1)
        sdf = np.linalg.norm(p - np.asarray(center), axis=-1) - radius
        volume.tsdf[i0:i1] = np.clip(sdf / volume.truncation, -1, 1)
    volume.weight[:] = 1.0
    volume.color[:] = 200.0
    return volume
