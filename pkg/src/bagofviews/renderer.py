"""Deterministic raycasting of textured triangle scenes from a posed pinhole camera.

Scenes carry solid (world-space) procedural textures, so a surface point has
the same albedo from every viewpoint. Depth is z-depth along the optical axis
with 0 as the no-hit sentinel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, ConfigError, SphericalPose, look_at_transform

BACKGROUND = (0, 0, 0)
AMBIENT = 0.35
DIFFUSE = 0.65


@dataclass(frozen=True)
class Texture:
    kind: str  # "checker", "noise" or "flat"
    color_a: tuple
    color_b: tuple
    frequency: float = 10.0  # cells per meter
    seed: int = 0
    phase: tuple = (0.0, 0.0, 0.0)


@dataclass
class Scene:
    triangles: np.ndarray  # (T, 3, 3) meters
    texture_ids: np.ndarray  # (T,) index into textures
    textures: list = field(default_factory=list)

    def __post_init__(self):
        self.triangles = np.asarray(self.triangles, dtype=np.float64).reshape(-1, 3, 3)
        self.texture_ids = np.asarray(self.texture_ids, dtype=np.int64).reshape(-1)
        if len(self.texture_ids) != len(self.triangles):
            raise ConfigError("one texture id per triangle required")

    @property
    def bounding_radius(self) -> float:
        if len(self.triangles) == 0:
            return 0.0
        return float(np.linalg.norm(self.triangles.reshape(-1, 3), axis=1).max())

    @property
    def normals(self) -> np.ndarray:
        n = np.cross(self.triangles[:, 1] - self.triangles[:, 0], self.triangles[:, 2] - self.triangles[:, 0])
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)


@dataclass
class RenderOutput:
    rgb: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float64 meters, 0 = no hit
    triangle_index: np.ndarray  # (H, W) int, -1 = no hit


# ---------------------------------------------------------------- textures

def _hash3(ix, iy, iz, seed):
    h = (ix.astype(np.uint32) * np.uint32(73856093)) ^ (iy.astype(np.uint32) * np.uint32(19349663))
    h ^= iz.astype(np.uint32) * np.uint32(83492791)
    h ^= np.uint32(seed * 2654435761 & 0xFFFFFFFF)
    h ^= h >> np.uint32(13)
    h *= np.uint32(0x5BD1E995)
    h ^= h >> np.uint32(15)
    return (h & np.uint32(0xFFFFFF)).astype(np.float64) / float(0xFFFFFF)


def value_noise(points: np.ndarray, frequency: float, seed: int, octaves: int = 3) -> np.ndarray:
    """Fractal value noise in [0, 1] sampled at world points (K, 3)."""
    total = np.zeros(len(points))
    amp, norm = 1.0, 0.0
    for o in range(octaves):
        p = points * frequency * (2.0**o)
        i = np.floor(p)
        f = p - i
        f = f * f * (3.0 - 2.0 * f)
        i = i.astype(np.int64)
        acc = np.zeros(len(points))
        for dx in (0, 1):
            wx = f[:, 0] if dx else 1.0 - f[:, 0]
            for dy in (0, 1):
                wy = f[:, 1] if dy else 1.0 - f[:, 1]
                for dz in (0, 1):
                    wz = f[:, 2] if dz else 1.0 - f[:, 2]
                    acc += wx * wy * wz * _hash3(i[:, 0] + dx, i[:, 1] + dy, i[:, 2] + dz, seed + o)
        total += amp * acc
        norm += amp
        amp *= 0.5
    return total / norm


def albedo(points: np.ndarray, tex: Texture) -> np.ndarray:
    """RGB albedo in [0, 1] for world points under a solid texture."""
    a = np.asarray(tex.color_a, dtype=np.float64)
    b = np.asarray(tex.color_b, dtype=np.float64)
    if tex.kind == "flat":
        return np.broadcast_to(a, (len(points), 3)).copy()
    grain = value_noise(points, tex.frequency * 2.5, tex.seed)
    if tex.kind == "checker":
        cells = np.floor((points + np.asarray(tex.phase)) * tex.frequency).astype(np.int64)
        mask = (cells.sum(axis=1) & 1).astype(np.float64)[:, None]
        base = a * (1.0 - mask) + b * mask
        return np.clip(base * (0.7 + 0.3 * grain[:, None]), 0.0, 1.0)
    if tex.kind == "noise":
        t = value_noise(points + np.asarray(tex.phase), tex.frequency, tex.seed + 101)
        t = np.clip((t - 0.5) * 3.0 + 0.5, 0.0, 1.0)[:, None]
        return np.clip((a * (1.0 - t) + b * t) * (0.8 + 0.2 * grain[:, None]), 0.0, 1.0)
    raise ConfigError(f"unknown texture kind {tex.kind!r}")


# ---------------------------------------------------------------- rendering

def render_transform(scene: Scene, cam_to_world: np.ndarray, intrinsics: CameraIntrinsics) -> RenderOutput:
    H, W = intrinsics.height, intrinsics.width
    depth = np.full((H, W), np.inf)
    tri_idx = np.full((H, W), -1, dtype=np.int64)
    rays = intrinsics.pixel_rays()
    R = cam_to_world[:3, :3]
    C = cam_to_world[:3, 3]
    near, far = intrinsics.depth_min, intrinsics.depth_max

    if len(scene.triangles):
        tri_cam = (scene.triangles - C) @ R  # rows: R^T (p - C)
        z = tri_cam[..., 2]
        zs = np.where(z > 1e-9, z, 1.0)
        pu = intrinsics.fx * tri_cam[..., 0] / zs + intrinsics.cx
        pv = intrinsics.fy * tri_cam[..., 1] / zs + intrinsics.cy
        behind = (z <= 1e-9).any(axis=1)
        u0 = np.where(behind, 0, np.clip(np.floor(pu.min(axis=1) - 0.5), 0, W)).astype(int)
        u1 = np.where(behind, W, np.clip(np.ceil(pu.max(axis=1) - 0.5) + 1, 0, W)).astype(int)
        v0 = np.where(behind, 0, np.clip(np.floor(pv.min(axis=1) - 0.5), 0, H)).astype(int)
        v1 = np.where(behind, H, np.clip(np.ceil(pv.max(axis=1) - 0.5) + 1, 0, H)).astype(int)
        all_behind = (z <= near).all(axis=1)

        for t in range(len(tri_cam)):
            if all_behind[t] or u1[t] <= u0[t] or v1[t] <= v0[t]:
                continue
            a, b, c = tri_cam[t]
            e1 = b - a
            e2 = c - a
            d = rays[v0[t]:v1[t], u0[t]:u1[t]]
            dx, dy = d[..., 0], d[..., 1]
            # pvec = d x e2 (d_z = 1)
            px = dy * e2[2] - e2[1]
            py = e2[0] - dx * e2[2]
            pz = dx * e2[1] - dy * e2[0]
            det = e1[0] * px + e1[1] * py + e1[2] * pz
            ok = np.abs(det) > 1e-14
            inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
            tv = -a
            u = (tv[0] * px + tv[1] * py + tv[2] * pz) * inv
            q = np.cross(tv, e1)
            v = (dx * q[0] + dy * q[1] + q[2]) * inv
            tt = (e2 @ q) * inv
            hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (tt >= near) & (tt <= far)
            zb = depth[v0[t]:v1[t], u0[t]:u1[t]]
            closer = hit & (tt < zb)
            if closer.any():
                zb[closer] = tt[closer]
                tri_idx[v0[t]:v1[t], u0[t]:u1[t]][closer] = t

    hitmask = tri_idx >= 0
    rgb = np.empty((H, W, 3), dtype=np.uint8)
    rgb[:] = BACKGROUND
    out_depth = np.where(hitmask, depth, 0.0)
    if hitmask.any():
        d_cam = rays[hitmask]
        zval = out_depth[hitmask]
        pts = (d_cam * zval[:, None]) @ R.T + C
        tris = tri_idx[hitmask]
        col = np.zeros((len(pts), 3))
        tex_of_hit = scene.texture_ids[tris]
        for tid in np.unique(tex_of_hit):
            sel = tex_of_hit == tid
            col[sel] = albedo(pts[sel], scene.textures[tid])
        view_dir = d_cam @ R.T
        view_dir /= np.linalg.norm(view_dir, axis=1, keepdims=True)
        lambert = np.abs(np.einsum("ij,ij->i", scene.normals[tris], view_dir))
        shade = AMBIENT + DIFFUSE * lambert
        rgb[hitmask] = np.clip(np.rint(col * shade[:, None] * 255.0), 0, 255).astype(np.uint8)
    return RenderOutput(rgb=rgb, depth=out_depth, triangle_index=tri_idx)


def render(scene: Scene, pose: SphericalPose, intrinsics: CameraIntrinsics) -> RenderOutput:
    return render_transform(scene, look_at_transform(pose), intrinsics)


# ---------------------------------------------------------------- procedural scenes

GENERATORS = ("textured-box-town", "ruin-cluster", "tower")


@dataclass(frozen=True)
class SceneSpec:
    generator: str = "tower"
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {"generator": self.generator, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d):
        return cls(generator=d["generator"], params=dict(d.get("params", {})))


def _box(cx, cy, z0, sx, sy, sz, yaw=0.0):
    """Closed-top box without a bottom face: 10 triangles."""
    hx, hy = sx / 2.0, sy / 2.0
    c, s = np.cos(yaw), np.sin(yaw)
    corners = []
    for z in (z0, z0 + sz):
        for x, y in ((-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)):
            corners.append((cx + c * x - s * y, cy + s * x + c * y, z))
    p = np.array(corners)
    faces = [
        (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7),  # sides
        (4, 5, 6, 7),  # top
    ]
    tris = []
    for a, b, c_, d in faces:
        tris.append((p[a], p[b], p[c_]))
        tris.append((p[a], p[c_], p[d]))
    return np.array(tris)


def _pyramid(cx, cy, z0, sx, sy, h):
    hx, hy = sx / 2.0, sy / 2.0
    base = np.array([(cx - hx, cy - hy, z0), (cx + hx, cy - hy, z0), (cx + hx, cy + hy, z0), (cx - hx, cy + hy, z0)])
    apex = np.array([cx, cy, z0 + h])
    return np.array([(base[i], base[(i + 1) % 4], apex) for i in range(4)])


def _palette(rng, count):
    textures = []
    for i in range(count):
        hue_a = rng.uniform(0.15, 0.95, size=3)
        hue_b = np.clip(hue_a * rng.uniform(0.1, 0.45), 0.0, 1.0)
        if rng.uniform() < 0.5:
            hue_a, hue_b = hue_b, hue_a
        kind = "checker" if i % 2 == 0 else "noise"
        freq = rng.uniform(9.0, 16.0) if kind == "checker" else rng.uniform(16.0, 24.0)
        textures.append(
            Texture(
                kind=kind,
                color_a=tuple(float(x) for x in hue_a),
                color_b=tuple(float(x) for x in hue_b),
                frequency=float(freq),
                seed=int(rng.integers(0, 2**31 - 1)),
                phase=tuple(float(x) for x in rng.uniform(0.0, 1.0, size=3) / freq),
            )
        )
    return textures


def _assign(tris_per_face, n_faces, rng, n_textures):
    # one texture per quad face (2 triangles)
    ids = rng.integers(0, n_textures, size=n_faces)
    return np.repeat(ids, tris_per_face)


def _gen_tower(rng, params):
    tiers = int(params.get("tiers", 3))
    base = float(params.get("base_width", 0.9))
    tier_h = float(params.get("tier_height", 0.3))
    taper = float(params.get("taper", 0.75))
    parts = []
    z = 0.0
    w = base
    for t in range(tiers):
        parts.append(_box(0.0, 0.0, z, w, w * rng.uniform(0.85, 1.0), tier_h))
        # a balcony block on a random side breaks the 4-fold symmetry
        side = rng.integers(0, 4)
        ang = side * np.pi / 2
        off = w / 2 + 0.05
        parts.append(_box(np.cos(ang) * off, np.sin(ang) * off, z + tier_h * 0.35, 0.1, 0.1, tier_h * 0.3, yaw=ang))
        z += tier_h
        w *= taper
    roof = _pyramid(0.0, 0.0, z, w * 1.1, w * 1.1, tier_h * 0.6)
    tris = np.concatenate(parts + [roof])
    return tris


def _gen_box_town(rng, params):
    n = int(params.get("grid", 3))
    spacing = float(params.get("spacing", 0.5))
    parts = []
    for i in range(n):
        for j in range(n):
            sx = rng.uniform(0.2, 0.4)
            sy = rng.uniform(0.2, 0.4)
            sz = rng.uniform(0.2, 0.9)
            parts.append(_box((i - (n - 1) / 2) * spacing, (j - (n - 1) / 2) * spacing, 0.0, sx, sy, sz, rng.uniform(0, 0.3)))
    return np.concatenate(parts)


def _gen_ruins(rng, params):
    walls = int(params.get("walls", 6))
    parts = []
    for k in range(walls):
        ang = 2 * np.pi * k / walls + rng.uniform(-0.2, 0.2)
        r = rng.uniform(0.3, 0.6)
        parts.append(_box(r * np.cos(ang), r * np.sin(ang), 0.0, rng.uniform(0.35, 0.6), 0.07, rng.uniform(0.25, 0.8), ang + np.pi / 2))
    for _ in range(int(params.get("rubble", 5))):
        parts.append(_box(*rng.uniform(-0.4, 0.4, size=2), 0.0, *rng.uniform(0.05, 0.15, size=3), rng.uniform(0, np.pi)))
    return np.concatenate(parts)


def normalize_triangles(tris: np.ndarray) -> np.ndarray:
    """Center on the z-axis, rest on z = 0, and scale the largest extent to 1."""
    pts = tris.reshape(-1, 3)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    shift = np.array([(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, lo[2]])
    scale = float((hi - lo).max())
    if scale <= 0:
        raise ConfigError("degenerate scene")
    return (tris - shift) / scale


def make_procedural_scene(spec: SceneSpec, seed: int) -> Scene:
    gens = {"tower": _gen_tower, "textured-box-town": _gen_box_town, "ruin-cluster": _gen_ruins}
    if spec.generator not in gens:
        raise ConfigError(f"unknown scene generator {spec.generator!r}; expected one of {GENERATORS}")
    rng = np.random.default_rng(seed)
    tris = normalize_triangles(gens[spec.generator](rng, spec.params))
    n_tex = int(spec.params.get("textures", 10))
    textures = _palette(rng, n_tex)
    ids = _assign(2, len(tris) // 2, rng, n_tex)
    if len(ids) < len(tris):  # odd tail (pyramids use single triangles)
        ids = np.concatenate([ids, rng.integers(0, n_tex, size=len(tris) - len(ids))])
    return Scene(triangles=tris, texture_ids=ids, textures=textures)
