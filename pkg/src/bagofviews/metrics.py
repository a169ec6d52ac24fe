"""Point-cloud distances (Hausdorff, Chamfer) and surface coverage.

Nearest neighbours come from a k-d tree, then every distance is recomputed
with the plain sqrt-of-squared-differences formula over all candidates inside
a slightly inflated ball, so the results equal exhaustive search bit for bit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class MetricsReport:
    hausdorff: float  # meters
    chamfer: float  # meters
    coverage: float
    view_count: int
    baseline_view_count: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hausdorff_cm"] = round(self.hausdorff * 100.0, 4)
        d["chamfer_cm"] = round(self.chamfer * 100.0, 4)
        return d

    def format(self) -> str:
        return (
            f"views {self.view_count}/{self.baseline_view_count}  "
            f"hausdorff {self.hausdorff * 100:.4f} cm  chamfer {self.chamfer * 100:.4f} cm  "
            f"coverage {self.coverage:.4f}"
        )


def _points(cloud) -> np.ndarray:
    pts = getattr(cloud, "points", cloud)
    return np.asarray(pts, dtype=np.float64).reshape(-1, 3)


def _exact(q, cand):
    return np.sqrt(((cand - q) ** 2).sum(-1))


def nearest_distances(query, ref) -> np.ndarray:
    """Distance from every query point to its nearest reference point (exact)."""
    Q, R = _points(query), _points(ref)
    if len(R) == 0:
        raise ValueError("nearest neighbour against an empty cloud")
    tree = cKDTree(R)
    k = min(4, len(R))
    approx, idx = tree.query(Q, k=k)
    approx = approx.reshape(len(Q), k)
    idx = idx.reshape(len(Q), k)
    radii = approx[:, 0] * (1.0 + 1e-9) + 1e-12
    out = _exact(Q[:, None, :], R[idx]).min(axis=1)
    # candidates beyond the k returned may still tie within rounding
    crowded = np.nonzero(approx[:, -1] <= radii)[0] if k == 4 else np.arange(0)
    for i in crowded:
        near = tree.query_ball_point(Q[i], radii[i])
        out[i] = _exact(Q[i], R[near]).min()
    return out


def hausdorff(A, B) -> float:
    if len(_points(A)) == 0 or len(_points(B)) == 0:
        raise ValueError("hausdorff distance of an empty cloud")
    return float(max(nearest_distances(A, B).max(), nearest_distances(B, A).max()))


def chamfer(A, B) -> float:
    if len(_points(A)) == 0 or len(_points(B)) == 0:
        raise ValueError("chamfer discrepancy of an empty cloud")
    return float(0.5 * (nearest_distances(A, B).mean() + nearest_distances(B, A).mean()))


def coverage(recon, baseline, eps: float) -> float:
    """Fraction of baseline points with a recon point within eps."""
    base = _points(baseline)
    if len(base) == 0:
        raise ValueError("coverage against an empty baseline")
    if len(_points(recon)) == 0:
        return 0.0
    d = nearest_distances(base, recon)
    return float(np.count_nonzero(d <= eps) / len(base))


def report(recon, baseline, eps: float, view_count: int = 0, baseline_view_count: int = 0) -> MetricsReport:
    return MetricsReport(
        hausdorff=hausdorff(recon, baseline),
        chamfer=chamfer(recon, baseline),
        coverage=coverage(recon, baseline, eps),
        view_count=view_count,
        baseline_view_count=baseline_view_count,
    )
