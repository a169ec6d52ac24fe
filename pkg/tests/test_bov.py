import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bagofviews.bov import (
    BOOTSTRAP, BagOfViews, BovConfig, EmptyVocabularyError, RefineError, Vocabulary, cosine_similarity,
    descriptor_distance, kmeans, quantize, refine_dataset, update_vocabulary, view_utility, vocabulary_change,
)
from bagofviews.features import DescriptorSet
from bagofviews.geometry import ConfigError, SphericalPose


def unit_rows(rng, m, n=128):
    X = rng.random((m, n))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def vocab(words, region=0):
    return Vocabulary(region, np.asarray(words, np.float32))


def oracle_quantize(d, words, c=2.0):
    best_k, best_cos = 0, -np.inf
    for k, w in enumerate(words):
        cos = float(np.dot(d, w) / (np.linalg.norm(d) * np.linalg.norm(w)))
        if cos > best_cos:
            best_k, best_cos = k, cos
    return best_k, 1.0 - c * best_cos


# ---- distances

def test_cosine_cases(rng):
    v = rng.random(128)
    assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-15)
    assert cosine_similarity(np.eye(4)[0], np.eye(4)[1]) == 0.0
    for _ in range(100):
        a, b = rng.normal(size=128), rng.normal(size=128)
        direct = sum(x * y for x, y in zip(a, b)) / math.sqrt(sum(x * x for x in a) * sum(y * y for y in b))
        assert abs(cosine_similarity(a, b) - direct) < 1e-12
    with pytest.raises(ValueError):
        cosine_similarity(np.zeros(3), np.ones(3))


def test_descriptor_distance_cases():
    e = np.eye(3)
    assert descriptor_distance(e[0], e[0]) == -1.0
    assert descriptor_distance(e[0], e[1]) == 1.0
    a = np.array([1.0, 0.0])
    b = np.array([0.5, math.sqrt(3) / 2])
    assert descriptor_distance(a, b) == pytest.approx(0.0, abs=1e-15)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=50)
def test_distance_range_non_negative(seed):
    rng = np.random.default_rng(seed)
    a, b = unit_rows(rng, 2)
    assert -1.0 - 1e-12 <= descriptor_distance(a, b) <= 1.0


# ---- quantization and utility

def test_quantize_cases(rng):
    e = np.eye(128)
    assert quantize(e[1], vocab([e[0], e[1]])) == (1, -1.0)
    tie = (e[0] + e[1]) / math.sqrt(2)
    assert quantize(tie, vocab([e[0], e[1]]))[0] == 0
    words = unit_rows(rng, 50).astype(np.float32)
    for d in unit_rows(rng, 200):
        k, dist = quantize(d, vocab(words))
        ok, odist = oracle_quantize(d, words.astype(np.float64))
        assert k == ok and abs(dist - odist) < 1e-12
    with pytest.raises(EmptyVocabularyError):
        quantize(e[0], Vocabulary())


def test_view_utility_cases(rng):
    words = unit_rows(rng, 20).astype(np.float32)
    D = unit_rows(rng, 35)
    assert view_utility(D, Vocabulary()) == BOOTSTRAP
    assert view_utility(words[[3, 3, 7, 11]], vocab(words)) == pytest.approx(-4.0, abs=1e-9)
    oracle = sum(oracle_quantize(d, words.astype(np.float64))[1] for d in D)
    assert abs(view_utility(D, vocab(words)) - oracle) < 1e-9
    assert view_utility(DescriptorSet.empty(), vocab(words)) == 0.0


def test_monotone_under_more_words(rng):
    words = unit_rows(rng, 10).astype(np.float32)
    extra = unit_rows(rng, 5).astype(np.float32)
    for d in unit_rows(rng, 50):
        assert quantize(d, vocab(np.vstack([words, extra])))[1] <= quantize(d, vocab(words))[1]


# ---- vocabulary update / change

def test_update_exact_pool(rng):
    D = unit_rows(rng, 12).astype(np.float32)
    v = update_vocabulary(Vocabulary(), D, BovConfig(words=12))
    assert len(v) == 12
    assert sorted(map(tuple, v.words)) == sorted(map(tuple, D))


def test_update_deterministic_and_normalized(rng):
    D = unit_rows(rng, 200)
    cfg = BovConfig(words=30)
    a = update_vocabulary(Vocabulary(), D, cfg)
    b = update_vocabulary(Vocabulary(), D, cfg)
    assert np.array_equal(a.words, b.words)
    assert len(a) == 30 and len(a.pool) == 200
    assert np.allclose(np.linalg.norm(a.words.astype(np.float64), axis=1), 1.0, atol=1e-6)
    small = update_vocabulary(Vocabulary(), D[:7], cfg)
    assert len(small) == 7


def test_update_fixpoint_for_repeated_descriptors(rng):
    D = unit_rows(rng, 80)
    cfg = BovConfig(words=10)
    v = update_vocabulary(Vocabulary(), D, cfg)
    again = update_vocabulary(v, D, cfg)
    assert np.array_equal(v.words, again.words)


def test_update_three_clusters():
    rng = np.random.default_rng(5)
    centers = np.zeros((3, 128))
    centers[0, :3] = 1
    centers[1, 40:43] = 1
    centers[2, 90:93] = 1
    pts = np.vstack([c + rng.normal(0, 0.01, (100, 128)) for c in centers])
    pts = np.abs(pts)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    v = update_vocabulary(Vocabulary(), pts, BovConfig(words=3))
    means = [pts[i * 100:(i + 1) * 100].mean(0) for i in range(3)]
    for m in means:
        m = m / np.linalg.norm(m)
        assert np.linalg.norm(v.words - m, axis=1).min() < 0.05


def test_pool_cap_keeps_newest(rng):
    D = unit_rows(rng, 50).astype(np.float32)
    v = update_vocabulary(Vocabulary(), D, BovConfig(words=5, pool_cap=20))
    assert np.array_equal(v.pool, D[-20:])


def test_vocabulary_change_cases(rng):
    W = 30
    words = unit_rows(rng, W).astype(np.float32)
    assert abs(vocabulary_change(vocab(words), vocab(words)) + W) < 1e-9
    e = np.eye(128, dtype=np.float32)
    assert vocabulary_change(vocab(e[:4]), vocab(e[4:8])) == 4.0
    assert vocabulary_change(vocab(words), Vocabulary()) == BOOTSTRAP
    new, old = unit_rows(rng, 7), unit_rows(rng, 9)
    oracle = 0.0
    for a in new.astype(np.float32).astype(np.float64):
        oracle += min(1 - 2 * float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b)) for b in old.astype(np.float32).astype(np.float64))
    got = vocabulary_change(vocab(new), vocab(old))
    assert abs(got - oracle) < 1e-9


# ---- k-means

def test_kmeans_trivial_cases(rng):
    X = rng.random((6, 4))
    assert sorted(map(tuple, kmeans(X, 6))) == sorted(map(tuple, X))
    same = np.tile(rng.random(4), (9, 1))
    assert np.allclose(kmeans(same, 1), same[0])
    with pytest.raises(ValueError):
        kmeans(X, 7)
    with pytest.raises(ValueError):
        kmeans(np.zeros((0, 3)), 1)


def test_kmeans_deterministic(rng):
    X = rng.random((300, 16))
    assert np.array_equal(kmeans(X, 8, seed=3), kmeans(X, 8, seed=3))


def test_kmeans_matches_exhaustive_two_partition():
    rng = np.random.default_rng(11)
    X = np.vstack([rng.uniform(-0.01, 0.01, (6, 3)), 1 + rng.uniform(-0.01, 0.01, (6, 3))])
    best = np.inf
    for mask in itertools.product([0, 1], repeat=len(X)):
        mask = np.array(mask, bool)
        if mask.all() or not mask.any():
            continue
        sse = sum(((X[m] - X[m].mean(0)) ** 2).sum() for m in (mask, ~mask))
        best = min(best, sse)
    C = kmeans(X, 2, seed=0)
    lab = ((X[:, None] - C[None]) ** 2).sum(-1).argmin(1)
    sse = sum(((X[lab == j] - C[j]) ** 2).sum() for j in range(2))
    assert sse == pytest.approx(best, rel=1e-9)


def test_kmeans_weights_equal_repetition(rng):
    X = rng.random((20, 5))
    w = rng.integers(1, 4, 20)
    rep = np.repeat(X, w, axis=0)
    Cw = kmeans(X, 3, seed=0, weights=w)
    # weighted centers are fixed points of Lloyd on the repeated set
    lab = ((rep[:, None] - Cw[None]) ** 2).sum(-1).argmin(1)
    for j in range(3):
        assert np.allclose(rep[lab == j].mean(0), Cw[j], atol=1e-12)


# ---- bag of views / refinement

def test_config_validation():
    for bad in ({"n_regions": 0}, {"words": 0}, {"distance_coefficient": 0.0}, {"pool_cap": 0}):
        with pytest.raises(ConfigError):
            BovConfig(**bad)


def test_region_isolation(rng):
    bov = BagOfViews(BovConfig(n_regions=4, words=5))
    bov.update(0, unit_rows(rng, 20))
    snap = [v.copy() for v in bov.vocabularies]
    bov.update(2, unit_rows(rng, 20))
    for j in (0, 1, 3):
        assert np.array_equal(bov.vocabularies[j].words, snap[j].words)
    assert not bov.vocabularies[2].is_empty


def test_serialization_round_trip(tmp_path, rng):
    bov = BagOfViews(BovConfig(n_regions=3, words=4))
    bov.update(1, unit_rows(rng, 10))
    p = tmp_path / "bov.json"
    bov.save(p)
    back = BagOfViews.load(p)
    assert back.config == bov.config
    for a, b in zip(bov.vocabularies, back.vocabularies):
        assert np.array_equal(a.words, b.words)
    D = unit_rows(rng, 5)
    assert back.utility(1, D) == bov.utility(1, D)


def _dataset(views, az=0.1):
    return [(i, SphericalPose(2.0, az, 0.3), DescriptorSet(v)) for i, v in enumerate(views)]


def test_single_view_bootstrap(rng):
    res = refine_dataset(_dataset([unit_rows(rng, 40)]), BovConfig())
    assert res.selected == [0]


def test_duplicates_rejected(rng):
    view = unit_rows(rng, 40)
    res = refine_dataset(_dataset([view] * 6), BovConfig(words=30))
    assert res.selected == [0]
    assert all(u <= 0 for _, _, u, _ in res.utilities[1:])


def test_refine_deterministic_and_order_sensitive(rng):
    views = [unit_rows(rng, 30) for _ in range(6)]
    cfg = BovConfig(n_regions=1, words=3, distance_coefficient=1.0)
    a = refine_dataset(_dataset(views), cfg)
    b = refine_dataset(_dataset(views), cfg)
    assert a.selected == b.selected
    assert [u for *_, u, _ in a.utilities] == [u for *_, u, _ in b.utilities]


def test_refine_reports_failing_view():
    def broken():
        raise OSError("corrupt png")
    ds = [(0, SphericalPose(2, 0, 0), np.zeros((64, 64), np.uint8)), (7, SphericalPose(2, 0, 0), broken)]
    with pytest.raises(RefineError, match="view 7"):
        refine_dataset(ds, BovConfig())
