"""Bag-of-Views: per-azimuth-range visual vocabularies used to score views.

Each of N azimuth ranges owns a Vocabulary (visual words + the pool of
descriptors they were clustered from). A view is scored by quantizing its
descriptors against its range's words with the signed cosine distance
``1 - c * cos`` and summing; a positive total marks the view as novel.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .features import DESCRIPTOR_DIM, DescriptorSet
from .geometry import ConfigError, SphericalPose, region_id

BOOTSTRAP = math.inf  # utility / change of an empty vocabulary


class EmptyVocabularyError(LookupError):
    """Quantization against a vocabulary with no words (bootstrap case)."""


@dataclass(frozen=True)
class BovConfig:
    n_regions: int = 9
    words: int = 30
    distance_coefficient: float = 2.0
    kmeans_seed: int = 0
    kmeans_max_iters: int = 100
    pool_cap: int | None = None

    def __post_init__(self):
        if self.n_regions < 1 or self.words < 1:
            raise ConfigError("n_regions and words must be >= 1")
        if not self.distance_coefficient > 0:
            raise ConfigError("distance_coefficient must be positive")
        if self.pool_cap is not None and self.pool_cap < 1:
            raise ConfigError("pool_cap must be >= 1 or None")


# ---------------------------------------------------------------- distances

def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


def descriptor_distance(a, b, coefficient: float = 2.0) -> float:
    return 1.0 - coefficient * cosine_similarity(a, b)


def _cosine_matrix(A, B):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    if (na == 0).any() or (nb == 0).any():
        raise ValueError("cosine similarity of a zero-norm vector")
    # einsum keeps each entry independent of the other rows (BLAS blocking is not)
    return np.einsum("ik,jk->ij", A, B) / np.outer(na, nb)


# ---------------------------------------------------------------- k-means

def _sqdist(X, C):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans(points, k: int, seed: int = 0, max_iters: int = 100, weights=None) -> np.ndarray:
    """Weighted k-means with k-means++ seeding; returns (k, n) centers.

    Deterministic for a given seed. Empty clusters are re-seeded with the
    point farthest from its current center.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("kmeans needs a non-empty (n_points, dim) array")
    n = len(X)
    if k < 1 or k > n:
        raise ValueError(f"k={k} must be in [1, {n}]")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    rng = np.random.default_rng(seed)

    def draw(prob):
        cum = np.cumsum(prob)
        return int(min(np.searchsorted(cum, rng.random() * cum[-1], side="right"), n - 1))

    chosen = [draw(w)]
    d2 = _sqdist(X, X[chosen[0]][None])[:, 0]
    for _ in range(1, k):
        prob = w * d2
        if prob.sum() <= 0:
            # every point coincides with a center already
            idx = next(i for i in range(n) if i not in set(chosen))
        else:
            idx = draw(prob)
        chosen.append(idx)
        d2 = np.minimum(d2, _sqdist(X, X[idx][None])[:, 0])
    centers = X[chosen].copy()

    labels = None
    for _ in range(max(max_iters, 1)):
        d = _sqdist(X, centers)
        new = np.argmin(d, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = labels == j
            if not members.any():
                far = np.argsort(-d[np.arange(n), labels], kind="stable")
                pick = next(i for i in far if (labels == labels[i]).sum() > 1)
                labels[pick] = j
                members = labels == j
            frac = w[members] / w[members].sum()
            centers[j] = frac @ X[members]
    return centers


# ---------------------------------------------------------------- vocabulary

@dataclass
class Vocabulary:
    region_id: int = 0
    words: np.ndarray = field(default_factory=lambda: np.zeros((0, DESCRIPTOR_DIM), np.float32))
    pool: np.ndarray = field(default_factory=lambda: np.zeros((0, DESCRIPTOR_DIM), np.float32))

    def __len__(self):
        return len(self.words)

    @property
    def is_empty(self) -> bool:
        return len(self.words) == 0

    def copy(self) -> "Vocabulary":
        return Vocabulary(self.region_id, self.words.copy(), self.pool.copy())


def quantize(d, vocab: Vocabulary, coefficient: float = 2.0) -> tuple[int, float]:
    if vocab.is_empty:
        raise EmptyVocabularyError(f"vocabulary {vocab.region_id} has no words")
    cos = _cosine_matrix(np.asarray(d)[None], vocab.words)[0]
    k = int(np.argmax(cos))
    return k, float(1.0 - coefficient * cos[k])


def view_utility(descriptors, vocab: Vocabulary, coefficient: float = 2.0) -> float:
    """Summed distance of every descriptor to its nearest word; +inf for an empty vocabulary."""
    D = descriptors.descriptors if isinstance(descriptors, DescriptorSet) else np.asarray(descriptors)
    if vocab.is_empty:
        return BOOTSTRAP
    if len(D) == 0:
        return 0.0
    best = _cosine_matrix(D, vocab.words).max(axis=1)
    return float(np.sum(1.0 - coefficient * best))


def update_vocabulary(vocab: Vocabulary, descriptors, config: BovConfig) -> Vocabulary:
    """Append descriptors to the pool and re-cluster; returns a new Vocabulary.

    Clustering runs on the distinct pool rows weighted by multiplicity, so a
    pool that only gains repeats of existing rows reproduces the same words.
    """
    D = descriptors.descriptors if isinstance(descriptors, DescriptorSet) else np.asarray(descriptors)
    pool = np.concatenate([vocab.pool, np.asarray(D, dtype=np.float32).reshape(-1, DESCRIPTOR_DIM)])
    if config.pool_cap is not None and len(pool) > config.pool_cap:
        pool = pool[-config.pool_cap:]
    if len(pool) == 0:
        return Vocabulary(vocab.region_id, vocab.words.copy(), pool)
    uniq, counts = np.unique(pool, axis=0, return_counts=True)
    k = min(config.words, len(uniq))
    centers = kmeans(uniq, k, seed=config.kmeans_seed, max_iters=config.kmeans_max_iters, weights=counts)
    norms = np.linalg.norm(centers, axis=1, keepdims=True)
    words = (centers / np.where(norms > 0, norms, 1.0)).astype(np.float32)
    return Vocabulary(vocab.region_id, words, pool)


def vocabulary_change(v_new: Vocabulary, v_old: Vocabulary, coefficient: float = 2.0) -> float:
    """Sum over new words of the distance to their closest old word; +inf if either is empty."""
    if v_new.is_empty or v_old.is_empty:
        return BOOTSTRAP
    best = _cosine_matrix(v_new.words, v_old.words).max(axis=1)
    return float(np.sum(1.0 - coefficient * best))


# ---------------------------------------------------------------- bag of views

class BagOfViews:
    def __init__(self, config: BovConfig | None = None):
        self.config = config or BovConfig()
        self.vocabularies = [Vocabulary(region_id=i) for i in range(self.config.n_regions)]

    def region_of(self, pose: SphericalPose) -> int:
        return region_id(pose, self.config.n_regions)

    def utility(self, region: int, descriptors) -> float:
        return view_utility(descriptors, self.vocabularies[region], self.config.distance_coefficient)

    def update(self, region: int, descriptors) -> Vocabulary:
        self.vocabularies[region] = update_vocabulary(self.vocabularies[region], descriptors, self.config)
        return self.vocabularies[region]

    def copy(self) -> "BagOfViews":
        out = BagOfViews(self.config)
        out.vocabularies = [v.copy() for v in self.vocabularies]
        return out

    # serialization: words as base64 little-endian float32
    def to_dict(self, include_pool: bool = False) -> dict:
        regions = []
        for v in self.vocabularies:
            rec = {
                "region_id": v.region_id,
                "shape": list(v.words.shape),
                "words": base64.b64encode(np.ascontiguousarray(v.words, dtype="<f4").tobytes()).decode("ascii"),
                "pool_size": int(len(v.pool)),
            }
            if include_pool:
                rec["pool"] = base64.b64encode(np.ascontiguousarray(v.pool, dtype="<f4").tobytes()).decode("ascii")
            regions.append(rec)
        return {"config": asdict(self.config), "regions": regions}

    @classmethod
    def from_dict(cls, d: dict) -> "BagOfViews":
        bov = cls(BovConfig(**d["config"]))
        for rec in d["regions"]:
            words = np.frombuffer(base64.b64decode(rec["words"]), dtype="<f4").reshape(rec["shape"]).astype(np.float32)
            pool = np.zeros((0, words.shape[1] if words.size else DESCRIPTOR_DIM), np.float32)
            if "pool" in rec:
                pool = np.frombuffer(base64.b64decode(rec["pool"]), dtype="<f4").reshape(-1, pool.shape[1]).astype(np.float32)
            bov.vocabularies[rec["region_id"]] = Vocabulary(rec["region_id"], words, pool)
        return bov

    def save(self, path, include_pool: bool = False) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(include_pool), f)

    @classmethod
    def load(cls, path) -> "BagOfViews":
        with open(path) as f:
            return cls.from_dict(json.load(f))


# ---------------------------------------------------------------- offline refinement

class RefineError(RuntimeError):
    pass


@dataclass
class RefineResult:
    selected: list
    bov: BagOfViews
    utilities: list  # (view_id, region, utility, accepted) per processed view


def refine_dataset(dataset, config: BovConfig, extractor=None) -> RefineResult:
    """Greedy offline view selection over `dataset` in order.

    `dataset` yields (view_id, pose, view) where view is a DescriptorSet, a
    grayscale/RGB image, or a zero-argument callable returning either.
    """
    from .features import SiftExtractor, to_grayscale

    extractor = extractor or SiftExtractor()
    bov = BagOfViews(config)
    selected, log = [], []
    it = iter(dataset)
    while True:
        try:
            item = next(it)
        except StopIteration:
            break
        except Exception as exc:  # loader failure inside the iterator
            raise RefineError(f"failed to load view: {exc}") from exc
        view_id, pose, view = item
        try:
            if callable(view):
                view = view()
            if not isinstance(view, DescriptorSet):
                view = extractor(to_grayscale(view))
        except Exception as exc:
            raise RefineError(f"view {view_id}: {exc}") from exc
        region = bov.region_of(pose)
        u = bov.utility(region, view)
        accepted = u > 0
        if accepted:
            bov.update(region, view)
            selected.append(view_id)
        log.append((view_id, region, u, bool(accepted)))
    return RefineResult(selected=selected, bov=bov, utilities=log)
