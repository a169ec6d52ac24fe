"""On-disk formats: RGB/depth PNGs, ASCII PLY, and the view dataset layout.

Dataset layout::

    root/manifest.json      scene spec, intrinsics, seeds, plan metadata
    root/poses.jsonl        {"id", "radius_m", "azimuth_rad", "elevation_rad"} per line
    root/rgb/0000.png       8-bit RGB
    root/depth/0000.png     16-bit depth in millimeters, 0 = invalid
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .geometry import CameraIntrinsics, SphericalPose


class DatasetError(RuntimeError):
    pass


# ---------------------------------------------------------------- images

def write_rgb(path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path, format="PNG")


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def depth_to_mm(depth_m: np.ndarray) -> np.ndarray:
    mm = np.rint(np.asarray(depth_m, dtype=np.float64) * 1000.0)
    mm[(mm < 0) | (mm > 65535)] = 0
    return mm.astype(np.uint16)


def write_depth(path, depth_m: np.ndarray) -> None:
    mm = depth_to_mm(depth_m)
    Image.fromarray(mm.astype("<u2")).save(path, format="PNG")


def read_depth(path) -> np.ndarray:
    with Image.open(path) as im:
        mm = np.asarray(im, dtype=np.uint16) if im.mode in ("I;16", "I;16L") else np.asarray(im.convert("I"))
    return mm.astype(np.float64) / 1000.0


# ---------------------------------------------------------------- PLY

def write_ply(path, points, colors=None, faces=None) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cols = None if colors is None else np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    tris = None if faces is None else np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property double x", "property double y", "property double z"]
    if cols is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    if tris is not None:
        lines += [f"element face {len(tris)}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    body = []
    for i, p in enumerate(pts):
        # shortest repr round-trips doubles exactly
        row = f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}"
        if cols is not None:
            row += f" {cols[i, 0]} {cols[i, 1]} {cols[i, 2]}"
        body.append(row)
    if tris is not None:
        body.extend(f"3 {a} {b} {c}" for a, b, c in tris)
    with open(path, "w") as f:
        f.write("\n".join(lines + body) + "\n")


@dataclass
class PlyData:
    points: np.ndarray
    colors: np.ndarray | None = None
    faces: np.ndarray | None = None


def read_ply(path) -> PlyData:
    try:
        with open(path) as f:
            if f.readline().strip() != "ply":
                raise ValueError("missing 'ply' magic")
            elements = []  # (name, count, [props])
            while True:
                line = f.readline()
                if not line:
                    raise ValueError("unterminated header")
                tok = line.split()
                if not tok or tok[0] == "comment":
                    continue
                if tok[0] == "format":
                    if tok[1] != "ascii":
                        raise ValueError(f"unsupported PLY format {tok[1]}")
                elif tok[0] == "element":
                    elements.append((tok[1], int(tok[2]), []))
                elif tok[0] == "property":
                    elements[-1][2].append(tok[-1])
                elif tok[0] == "end_header":
                    break
            points = colors = faces = None
            for name, count, props in elements:
                rows = [f.readline().split() for _ in range(count)]
                if any(not r for r in rows):
                    raise ValueError(f"truncated {name} data")
                if name == "vertex":
                    arr = np.array(rows, dtype=np.float64).reshape(count, len(props))
                    points = arr[:, [props.index(a) for a in ("x", "y", "z")]]
                    if "red" in props:
                        colors = arr[:, [props.index(a) for a in ("red", "green", "blue")]].astype(np.uint8)
                elif name == "face":
                    faces = np.array([[int(v) for v in r[1:4]] for r in rows], dtype=np.int64).reshape(-1, 3)
            if points is None:
                raise ValueError("no vertex element")
    except (OSError, ValueError, IndexError) as exc:
        raise DatasetError(f"{path}: cannot parse PLY ({exc})") from exc
    return PlyData(points, colors, faces)


# ---------------------------------------------------------------- dataset

def view_name(view_id: int) -> str:
    return f"{view_id:04d}.png"


@dataclass
class Dataset:
    root: str
    manifest: dict
    poses: list = field(default_factory=list)  # [(id, SphericalPose)]

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(**self.manifest["intrinsics"])

    @property
    def ids(self) -> list:
        return [i for i, _ in self.poses]

    def pose(self, view_id: int) -> SphericalPose:
        return dict(self.poses)[view_id]

    def rgb(self, view_id: int) -> np.ndarray:
        return read_rgb(os.path.join(self.root, "rgb", view_name(view_id)))

    def depth(self, view_id: int) -> np.ndarray:
        return read_depth(os.path.join(self.root, "depth", view_name(view_id)))


def prepare_output_dir(path, forbid=()) -> str:
    """Create a fresh output directory; refuses to write into any `forbid` tree."""
    out = os.path.realpath(path)
    for other in forbid:
        o = os.path.realpath(other)
        if out == o or out.startswith(o + os.sep):
            raise DatasetError(f"refusing to write into input dataset {other}")
    os.makedirs(out, exist_ok=True)
    return out


class DatasetWriter:
    def __init__(self, root, manifest: dict):
        self.root = root
        os.makedirs(os.path.join(root, "rgb"), exist_ok=True)
        os.makedirs(os.path.join(root, "depth"), exist_ok=True)
        with open(os.path.join(root, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        self._poses = open(os.path.join(root, "poses.jsonl"), "w")
        self.count = 0

    def add(self, view_id: int, pose: SphericalPose, rgb, depth) -> None:
        write_rgb(os.path.join(self.root, "rgb", view_name(view_id)), rgb)
        write_depth(os.path.join(self.root, "depth", view_name(view_id)), depth)
        rec = {"id": view_id, "radius_m": pose.radius, "azimuth_rad": pose.azimuth, "elevation_rad": pose.elevation}
        self._poses.write(json.dumps(rec, sort_keys=True) + "\n")
        self.count += 1

    def close(self):
        self._poses.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_dataset(root) -> Dataset:
    try:
        with open(os.path.join(root, "manifest.json")) as f:
            manifest = json.load(f)
        poses = []
        with open(os.path.join(root, "poses.jsonl")) as f:
            for line in f:
                if line.strip():
                    d = json.loads(line)
                    poses.append((int(d["id"]), SphericalPose(d["radius_m"], d["azimuth_rad"], d["elevation_rad"])))
    except (OSError, ValueError, KeyError) as exc:
        raise DatasetError(f"{root}: not a valid dataset ({exc})") from exc
    ds = Dataset(root, manifest, poses)
    for i, _ in poses:
        for sub in ("rgb", "depth"):
            if not os.path.exists(os.path.join(root, sub, view_name(i))):
                raise DatasetError(f"{root}: view {i} is missing {sub}/{view_name(i)}")
    return ds
