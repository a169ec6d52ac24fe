"""Difference-of-Gaussians keypoints with 128-d gradient-histogram descriptors.

A compact SIFT: Gaussian scale space, DoG extrema with quadratic
sub-pixel refinement, contrast and edge rejection, dominant-orientation
assignment and 4x4x8 descriptors (normalize, clamp at 0.2, renormalize).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, minimum_filter

from .geometry import ConfigError

DESCRIPTOR_DIM = 128
CACHE_MAGIC = b"BOVD"


class Keypoint(NamedTuple):
    x: float
    y: float
    scale: float
    orientation: float


@dataclass
class DescriptorSet:
    descriptors: np.ndarray  # (m, 128) float32, unit rows, non-negative
    keypoints: np.ndarray | None = None  # (m, 4): x, y, scale, orientation

    def __post_init__(self):
        self.descriptors = np.asarray(self.descriptors, dtype=np.float32).reshape(-1, DESCRIPTOR_DIM)
        if self.keypoints is not None:
            self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 4)

    def __len__(self):
        return len(self.descriptors)

    def keypoint(self, i: int) -> Keypoint:
        return Keypoint(*(float(v) for v in self.keypoints[i]))

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, DESCRIPTOR_DIM), np.float32), np.zeros((0, 4)))


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 2:
        return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    g = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.rint(g), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class SiftParams:
    octaves: int = 4
    scales_per_octave: int = 3
    sigma0: float = 1.6
    assumed_blur: float = 0.5
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    max_keypoints: int = 1000
    border: int = 5
    ori_bins: int = 36
    ori_peak_ratio: float = 0.8
    desc_width: int = 4
    desc_bins: int = 8
    desc_clamp: float = 0.2


class FeatureExtractor:
    """Anything callable as extractor(gray) -> DescriptorSet can replace SiftExtractor."""

    def __call__(self, gray: np.ndarray) -> DescriptorSet:  # pragma: no cover - interface
        raise NotImplementedError


class SiftExtractor(FeatureExtractor):
    def __init__(self, params: SiftParams | None = None):
        self.params = params or SiftParams()

    def __call__(self, gray):
        return extract(gray, self.params)


# ---------------------------------------------------------------- scale space

def _scale_space(img, p: SiftParams):
    s = p.scales_per_octave
    k = 2.0 ** (1.0 / s)
    incs = [math.sqrt(max(p.sigma0**2 - p.assumed_blur**2, 0.01))]
    for i in range(1, s + 3):
        prev = p.sigma0 * k ** (i - 1)
        incs.append(math.sqrt((prev * k) ** 2 - prev**2))
    gauss, dogs = [], []
    base = gaussian_filter(img, incs[0], mode="nearest")
    for _ in range(p.octaves):
        if min(base.shape) < 2 * p.border + 3:
            break
        layers = [base]
        for i in range(1, s + 3):
            layers.append(gaussian_filter(layers[-1], incs[i], mode="nearest"))
        g = np.stack(layers)
        gauss.append(g)
        dogs.append(g[1:] - g[:-1])
        base = g[s][::2, ::2]
    return gauss, dogs


def _refine(D, cand, p: SiftParams):
    """Vectorized quadratic refinement of integer extrema (layer, y, x)."""
    s = p.scales_per_octave
    L, H, W = D.shape
    l, y, x = (c.astype(np.int64) for c in cand)
    alive = np.ones(len(l), dtype=bool)
    conv = np.zeros(len(l), dtype=bool)
    off = np.zeros((len(l), 3))
    grad = np.zeros((len(l), 3))
    for _ in range(5):
        idx = np.nonzero(alive & ~conv)[0]
        if len(idx) == 0:
            break
        li, yi, xi = l[idx], y[idx], x[idx]
        c = D[li, yi, xi]
        dx = 0.5 * (D[li, yi, xi + 1] - D[li, yi, xi - 1])
        dy = 0.5 * (D[li, yi + 1, xi] - D[li, yi - 1, xi])
        ds = 0.5 * (D[li + 1, yi, xi] - D[li - 1, yi, xi])
        dxx = D[li, yi, xi + 1] + D[li, yi, xi - 1] - 2 * c
        dyy = D[li, yi + 1, xi] + D[li, yi - 1, xi] - 2 * c
        dss = D[li + 1, yi, xi] + D[li - 1, yi, xi] - 2 * c
        dxy = 0.25 * (D[li, yi + 1, xi + 1] - D[li, yi + 1, xi - 1] - D[li, yi - 1, xi + 1] + D[li, yi - 1, xi - 1])
        dxs = 0.25 * (D[li + 1, yi, xi + 1] - D[li + 1, yi, xi - 1] - D[li - 1, yi, xi + 1] + D[li - 1, yi, xi - 1])
        dys = 0.25 * (D[li + 1, yi + 1, xi] - D[li + 1, yi - 1, xi] - D[li - 1, yi + 1, xi] + D[li - 1, yi - 1, xi])
        Hm = np.stack([np.stack([dxx, dxy, dxs], -1), np.stack([dxy, dyy, dys], -1), np.stack([dxs, dys, dss], -1)], -2)
        g = np.stack([dx, dy, ds], -1)
        det = np.linalg.det(Hm)
        good = np.abs(det) > 1e-12
        o = np.zeros_like(g)
        if good.any():
            o[good] = -np.linalg.solve(Hm[good], g[good][..., None])[..., 0]
        alive[idx[~good]] = False
        o = np.where(good[:, None], o, 0.0)
        off[idx] = o
        grad[idx] = g
        done = good & (np.abs(o) < 0.5).all(axis=1)
        conv[idx[done]] = True
        move = idx[good & ~done]
        if len(move):
            step = np.rint(off[move]).astype(np.int64)
            x[move] += step[:, 0]
            y[move] += step[:, 1]
            l[move] += step[:, 2]
            inside = (
                (l[move] >= 1) & (l[move] <= s)
                & (y[move] >= p.border) & (y[move] < H - p.border)
                & (x[move] >= p.border) & (x[move] < W - p.border)
            )
            alive[move[~inside]] = False
    keep = alive & conv
    l, y, x, off, grad = l[keep], y[keep], x[keep], off[keep], grad[keep]
    value = D[l, y, x] + 0.5 * np.einsum("ij,ij->i", grad, off)
    c = D[l, y, x]
    dxx = D[l, y, x + 1] + D[l, y, x - 1] - 2 * c
    dyy = D[l, y + 1, x] + D[l, y - 1, x] - 2 * c
    dxy = 0.25 * (D[l, y + 1, x + 1] - D[l, y + 1, x - 1] - D[l, y - 1, x + 1] + D[l, y - 1, x - 1])
    tr = dxx + dyy
    det2 = dxx * dyy - dxy * dxy
    r = p.edge_ratio
    ok = (np.abs(value) >= p.contrast_threshold) & (det2 > 0) & (tr * tr * r < (r + 1) ** 2 * det2)
    return l[ok], y[ok], x[ok], off[ok], np.abs(value[ok])


def _gradients(g):
    gy, gx = np.zeros_like(g), np.zeros_like(g)
    gx[:, 1:-1] = g[:, 2:] - g[:, :-2]
    gy[1:-1, :] = g[2:, :] - g[:-2, :]
    return np.hypot(gx, gy), np.mod(np.arctan2(gy, gx), 2 * np.pi)


def _orientations(mag, ori, x, y, sigma, p: SiftParams):
    H, W = mag.shape
    sw = 1.5 * sigma
    rad = int(round(3 * sw))
    xi, yi = int(round(x)), int(round(y))
    y0, y1 = max(yi - rad, 1), min(yi + rad + 1, H - 1)
    x0, x1 = max(xi - rad, 1), min(xi + rad + 1, W - 1)
    if y1 <= y0 or x1 <= x0:
        return []
    yy, xx = np.mgrid[y0:y1, x0:x1]
    w = np.exp(-((xx - xi) ** 2 + (yy - yi) ** 2) / (2 * sw * sw)) * mag[y0:y1, x0:x1]
    nb = p.ori_bins
    bins = np.floor(ori[y0:y1, x0:x1] * nb / (2 * np.pi)).astype(np.int64) % nb
    hist = np.bincount(bins.ravel(), weights=w.ravel(), minlength=nb)
    sm = (6 * hist + 4 * (np.roll(hist, 1) + np.roll(hist, -1)) + np.roll(hist, 2) + np.roll(hist, -2)) / 16.0
    peak = sm.max()
    if peak <= 0:
        return []
    left, right = np.roll(sm, 1), np.roll(sm, -1)
    out = []
    for b in np.nonzero((sm > left) & (sm > right) & (sm >= p.ori_peak_ratio * peak))[0]:
        denom = left[b] - 2 * sm[b] + right[b]
        shift = 0.5 * (left[b] - right[b]) / denom if denom != 0 else 0.0
        out.append(((b + 0.5 + shift) % nb) * 2 * np.pi / nb)
    return out


def _descriptor(mag, ori, x, y, sigma, angle, p: SiftParams):
    H, W = mag.shape
    d, nb = p.desc_width, p.desc_bins
    hw = 3.0 * sigma
    rad = int(round(hw * math.sqrt(2) * (d + 1) * 0.5))
    rad = min(rad, int(math.hypot(H, W)))
    xi, yi = int(round(x)), int(round(y))
    y0, y1 = max(yi - rad, 1), min(yi + rad + 1, H - 1)
    x0, x1 = max(xi - rad, 1), min(xi + rad + 1, W - 1)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dx = (xx - x).ravel()
    dy = (yy - y).ravel()
    ca, sa = math.cos(angle), math.sin(angle)
    c_rot = (dx * ca + dy * sa) / hw
    r_rot = (-dx * sa + dy * ca) / hw
    cb = c_rot + d / 2 - 0.5
    rb = r_rot + d / 2 - 0.5
    sel = (rb > -1) & (rb < d) & (cb > -1) & (cb < d)
    if not sel.any():
        return None
    cb, rb = cb[sel], rb[sel]
    wgt = np.exp(-(c_rot[sel] ** 2 + r_rot[sel] ** 2) / (2 * (0.5 * d) ** 2)) * mag[y0:y1, x0:x1].ravel()[sel]
    ob = np.mod(ori[y0:y1, x0:x1].ravel()[sel] - angle, 2 * np.pi) * nb / (2 * np.pi)
    r0, c0, o0 = np.floor(rb), np.floor(cb), np.floor(ob)
    fr, fc, fo = rb - r0, cb - c0, ob - o0
    r0 = r0.astype(np.int64) + 1
    c0 = c0.astype(np.int64) + 1
    o0 = o0.astype(np.int64)
    hist = np.zeros((d + 2) * (d + 2) * nb)
    for dr in (0, 1):
        wr = fr if dr else 1 - fr
        for dc in (0, 1):
            wc = fc if dc else 1 - fc
            for do in (0, 1):
                wo = fo if do else 1 - fo
                flat = ((r0 + dr) * (d + 2) + (c0 + dc)) * nb + (o0 + do) % nb
                hist += np.bincount(flat, weights=wgt * wr * wc * wo, minlength=hist.size)
    vec = hist.reshape(d + 2, d + 2, nb)[1:-1, 1:-1].ravel()
    n = np.linalg.norm(vec)
    if n <= 1e-12:
        return None
    vec = np.minimum(vec / n, p.desc_clamp)
    n = np.linalg.norm(vec)
    if n <= 1e-12:
        return None
    return vec / n


def _as_float_image(image):
    img = np.asarray(image)
    if img.ndim == 3 and img.shape[-1] == 3:
        img = to_grayscale(img)
    if img.ndim != 2:
        raise ConfigError("feature extraction expects a grayscale or RGB image")
    if img.shape[0] < 32 or img.shape[1] < 32:
        raise ConfigError(f"image too small for feature extraction: {img.shape}")
    if np.issubdtype(img.dtype, np.integer):
        return img.astype(np.float64) / 255.0
    img = img.astype(np.float64)
    return img / 255.0 if img.max() > 1.0 else img


def extract(image: np.ndarray, params: SiftParams | None = None) -> DescriptorSet:
    p = params or SiftParams()
    img = _as_float_image(image)
    gauss, dogs = _scale_space(img, p)
    s = p.scales_per_octave
    cands = []  # (response, x, y, scale, octave, layer, x_oct, y_oct, sigma_oct)
    for o, D in enumerate(dogs):
        L, H, W = D.shape
        absD = np.abs(D)
        ext = ((D == maximum_filter(D, size=3)) | (D == minimum_filter(D, size=3))) & (absD > 0.5 * p.contrast_threshold)
        ext[0] = ext[-1] = False
        b = p.border
        ext[:, :b] = ext[:, -b:] = False
        ext[:, :, :b] = ext[:, :, -b:] = False
        cand = np.nonzero(ext)
        if len(cand[0]) == 0:
            continue
        l, y, x, off, resp = _refine(D, cand, p)
        xo = x + off[:, 0]
        yo = y + off[:, 1]
        sig = p.sigma0 * 2.0 ** ((l + off[:, 2]) / s)
        scale = 2.0**o
        for i in range(len(l)):
            cands.append((resp[i], xo[i] * scale, yo[i] * scale, sig[i] * scale, o, int(l[i]), xo[i], yo[i], sig[i]))
    if not cands:
        return DescriptorSet.empty()

    grad_cache = {}

    def grads(o, layer):
        key = (o, layer)
        if key not in grad_cache:
            grad_cache[key] = _gradients(gauss[o][layer])
        return grad_cache[key]

    oriented = []
    for c in cands:
        resp, X, Y, S, o, layer, xo, yo, so = c
        mag, ori = grads(o, layer)
        for ang in _orientations(mag, ori, xo, yo, so, p):
            oriented.append((resp, X, Y, S, ang, o, layer, xo, yo, so))
    # strongest first, deterministic tie-break on geometry
    oriented.sort(key=lambda t: (-t[0], t[2], t[1], -t[3], t[4]))
    seen = set()
    kps, descs = [], []
    for resp, X, Y, S, ang, o, layer, xo, yo, so in oriented:
        if len(kps) >= p.max_keypoints:
            break
        key = (round(X, 6), round(Y, 6), round(S, 6), round(ang, 6))
        if key in seen:
            continue
        seen.add(key)
        mag, ori = grads(o, layer)
        vec = _descriptor(mag, ori, xo, yo, so, ang, p)
        if vec is None:
            continue
        kps.append((X, Y, S, ang))
        descs.append(vec)
    if not kps:
        return DescriptorSet.empty()
    kps = np.array(kps)
    descs = np.array(descs)
    order = np.lexsort((kps[:, 3], kps[:, 0], kps[:, 1], -kps[:, 2]))
    return DescriptorSet(descriptors=descs[order].astype(np.float32), keypoints=kps[order])


# ---------------------------------------------------------------- descriptor cache

def write_descriptor_cache(path, ds: DescriptorSet) -> None:
    m, n = ds.descriptors.shape
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC + struct.pack("<II", m, n))
        f.write(np.ascontiguousarray(ds.descriptors, dtype="<f4").tobytes())


def read_descriptor_cache(path) -> DescriptorSet:
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) != 12 or head[:4] != CACHE_MAGIC:
            raise ValueError(f"{path}: not a descriptor cache file")
        m, n = struct.unpack("<II", head[4:])
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != m * n:
        raise ValueError(f"{path}: truncated descriptor cache ({data.size} of {m * n} floats)")
    return DescriptorSet(descriptors=data.reshape(m, n).astype(np.float32))
