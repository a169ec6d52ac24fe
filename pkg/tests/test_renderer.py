import math

import numpy as np
import pytest

from bagofviews.geometry import CameraIntrinsics, ConfigError, SphericalPose, look_at_transform
from bagofviews.renderer import (
    GENERATORS, Scene, SceneSpec, Texture, _box, make_procedural_scene, render, render_transform,
)

FLAT = Texture("flat", (0.8, 0.8, 0.8), (0.8, 0.8, 0.8))


def unit_square_at(d):
    """Unit square in the plane x = d facing a camera at the origin looking along +x."""
    a, b, c, e = (d, -0.5, -0.5), (d, 0.5, -0.5), (d, 0.5, 0.5), (d, -0.5, 0.5)
    return Scene(np.array([[a, b, c], [a, c, e]]), [0, 0], [FLAT])


def camera_looking_along_x():
    T = np.eye(4)
    T[:3, 0] = (0, -1, 0)
    T[:3, 1] = (0, 0, -1)
    T[:3, 2] = (1, 0, 0)
    return T


@pytest.mark.parametrize("d", [0.3, 1.0, 2.7, 7.5])
def test_square_center_depth(d):
    # odd size so a pixel center sits on the optical axis
    intr = CameraIntrinsics(width=65, height=65)
    out = render_transform(unit_square_at(d), camera_looking_along_x(), intr)
    assert abs(out.depth[32, 32] - d) < 1e-6


def test_empty_scene():
    scene = Scene(np.zeros((0, 3, 3)), [], [])
    out = render(scene, SphericalPose(2, 0, 0.3), CameraIntrinsics(64, 64))
    assert np.all(out.depth == 0)
    assert np.all(out.rgb == 0)
    assert np.all(out.triangle_index == -1)


def test_cube_silhouette_matches_projected_face():
    cube = Scene(_box(0, 0, -0.5, 1, 1, 1), np.zeros(10, int), [FLAT])
    intr = CameraIntrinsics()
    out = render(cube, SphericalPose(2, 0, 0), intr)
    frac = np.count_nonzero(out.depth > 0) / out.depth.size
    # facing face at distance 1.5 projects to a square of side fx / 1.5 px
    expected = (intr.fx / 1.5) ** 2 / (intr.width * intr.height)
    assert abs(frac - expected) / expected < 0.02


def test_depth_rgb_consistency_and_range(tower):
    intr = CameraIntrinsics(128, 128)
    out = render(tower, SphericalPose(2.4, 1.0, 0.4), intr)
    hit = out.depth > 0
    assert np.array_equal(hit, out.triangle_index >= 0)
    assert np.all(out.rgb[~hit] == 0)
    assert np.all(out.rgb[hit].max(axis=1) > 0)  # ambient term keeps hits non-black
    d = out.depth[hit]
    assert d.min() >= intr.depth_min and d.max() <= intr.depth_max


def test_reprojection_lands_on_triangle_plane(tower):
    intr = CameraIntrinsics(160, 160)
    pose = SphericalPose(2.5, 2.2, 0.6)
    out = render(tower, pose, intr)
    T = look_at_transform(pose)
    rng = np.random.default_rng(3)
    vs, us = np.nonzero(out.depth > 0)
    for k in rng.choice(len(vs), 200, replace=False):
        v, u = vs[k], us[k]
        ray = intr.pixel_rays()[v, u]
        p = T[:3, :3] @ (ray * out.depth[v, u]) + T[:3, 3]
        tri = tower.triangles[out.triangle_index[v, u]]
        n = tower.normals[out.triangle_index[v, u]]
        assert abs((p - tri[0]) @ n) < 1e-4


def test_render_is_pure(tower):
    intr = CameraIntrinsics(96, 96)
    a = render(tower, SphericalPose(2.4, 0.7, 0.5), intr)
    b = render(tower, SphericalPose(2.4, 0.7, 0.5), intr)
    assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.depth, b.depth)


def test_generator_deterministic():
    a = make_procedural_scene(SceneSpec("textured-box-town"), 7)
    b = make_procedural_scene(SceneSpec("textured-box-town"), 7)
    assert np.array_equal(a.triangles, b.triangles)
    assert np.array_equal(a.texture_ids, b.texture_ids)
    assert a.textures == b.textures
    c = make_procedural_scene(SceneSpec("textured-box-town"), 8)
    assert not np.array_equal(a.triangles, c.triangles)


@pytest.mark.parametrize("gen", GENERATORS)
@pytest.mark.parametrize("seed", [0, 1, 7])
def test_scene_invariants(gen, seed):
    s = make_procedural_scene(SceneSpec(gen), seed)
    pts = s.triangles.reshape(-1, 3)
    lo, hi = pts.min(0), pts.max(0)
    assert abs(lo[2]) < 1e-12  # grounded
    assert abs(lo[0] + hi[0]) < 1e-12 and abs(lo[1] + hi[1]) < 1e-12  # centered on the z-axis
    assert abs((hi - lo).max() - 1.0) < 1e-12  # normalized
    assert s.texture_ids.min() >= 0 and s.texture_ids.max() < len(s.textures)


def test_unknown_generator():
    with pytest.raises(ConfigError):
        make_procedural_scene(SceneSpec("castle"), 0)


def test_scene_spec_round_trip():
    spec = SceneSpec("tower", {"tiers": 4})
    assert SceneSpec.from_dict(spec.to_dict()) == spec
