import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from bagofviews.metrics import MetricsReport, chamfer, coverage, hausdorff, report


def brute_nn(A, B):
    return np.array([np.sqrt(((B - a) ** 2).sum(-1)).min() for a in A])


def brute_hausdorff(A, B):
    return max(brute_nn(A, B).max(), brute_nn(B, A).max())


def brute_chamfer(A, B):
    return 0.5 * (brute_nn(A, B).mean() + brute_nn(B, A).mean())


def test_trivial_cases():
    A = np.random.default_rng(0).random((20, 3))
    assert hausdorff(A, A) == 0.0 and chamfer(A, A) == 0.0
    assert hausdorff([[0, 0, 0]], [[1, 0, 0]]) == 1.0
    assert chamfer([[0, 0, 0]], [[1, 0, 0]]) == 1.0


def test_brute_force_equality(rng):
    for _ in range(20):
        A, B = rng.random((100, 3)), rng.random((80, 3))
        assert hausdorff(A, B) == brute_hausdorff(A, B)
        assert chamfer(A, B) == brute_chamfer(A, B)


def test_ties_and_duplicates_exact(rng):
    # lattice clouds produce many equidistant neighbours
    g = np.stack(np.meshgrid(*[np.arange(5.0)] * 3), -1).reshape(-1, 3)
    A = g + 0.5
    assert hausdorff(A, g) == brute_hausdorff(A, g)
    assert chamfer(A, g) == brute_chamfer(A, g)
    dup = np.vstack([g, g])
    assert chamfer(dup, g) == 0.0


def test_symmetry_and_rigid_invariance(rng):
    A, B = rng.random((60, 3)), rng.random((70, 3))
    assert hausdorff(A, B) == hausdorff(B, A)
    assert chamfer(A, B) == chamfer(B, A)
    R = Rotation.from_euler("xyz", [0.3, -1.1, 2.0]).as_matrix()
    t = np.array([0.5, -2.0, 3.0])
    A2, B2 = A @ R.T + t, B @ R.T + t
    assert abs(hausdorff(A2, B2) - hausdorff(A, B)) < 1e-9
    assert abs(chamfer(A2, B2) - chamfer(A, B)) < 1e-9


def test_coverage_cases(rng):
    base = rng.random((200, 3))
    eps = 0.01
    assert coverage(base, base, eps) == 1.0
    assert coverage(np.zeros((0, 3)), base, eps) == 0.0
    recon = base.copy()
    recon[100:] += 10 * eps
    # displaced half must not be within eps of anything
    base = np.vstack([base[:100], np.arange(100)[:, None] * np.array([[1.0, 0, 0]]) + 100])
    recon = np.vstack([base[:100], base[100:] + [0, 10 * eps, 0]])
    assert coverage(recon, base, eps) == 0.5


def test_empty_inputs_raise():
    with pytest.raises(ValueError):
        hausdorff(np.zeros((0, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        chamfer(np.ones((2, 3)), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        coverage(np.ones((2, 3)), np.zeros((0, 3)), 0.1)


def test_report_fields(rng):
    A, B = rng.random((30, 3)), rng.random((30, 3))
    rep = report(A, B, 0.05, 4, 288)
    d = rep.to_dict()
    assert {"view_count", "baseline_view_count", "hausdorff_cm", "chamfer_cm", "coverage"} <= set(d)
    assert d["hausdorff_cm"] == round(rep.hausdorff * 100, 4)
    assert rep.hausdorff >= rep.chamfer >= 0
    assert "cm" in rep.format()
    assert isinstance(rep, MetricsReport)
