"""Trajectory quality metrics: Chamfer distance, face/area coverage and jerk.

Each metric with a non-trivial cost comes in a brute-force form and an
accelerated form; tests hold the two to exact (coverage) or 1e-9 relative
(Chamfer) agreement.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import SegmentGrid, segment_distance_sq
from .trajectory import TrajectorySet

DEFAULT_R_SPRAY = 0.05


@dataclass
class MetricsReport:
    pcd_sum: float
    pcd_mean: float
    coverage_overlap: float
    coverage_area: float
    smoothness: float
    r_spray: float

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=False)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(d[k]) for k in cls.__dataclass_fields__})


def _points(S):
    S = np.asarray(S, dtype=np.float64).reshape(-1, 3)
    if len(S) == 0:
        raise ValueError("chamfer distance needs two non-empty point sets")
    return S


def _nn_sq_naive(A, B, block=512):
    out = np.empty(len(A))
    for i in range(0, len(A), block):
        diff = A[i:i + block, None, :] - B[None, :, :]
        out[i:i + block] = (diff * diff).sum(axis=2).min(axis=1)
    return out


def _nn_sq_tree(A, B):
    # the tree only selects the neighbour; the squared distance is recomputed
    # with the same arithmetic as the brute-force path
    _, idx = cKDTree(B).query(A, k=1)
    diff = A - B[idx]
    return (diff * diff).sum(axis=1)


def chamfer(S1, S2, mode="accelerated"):
    """Symmetric sum of squared nearest-neighbour distances.

    Returns ``(pcd_sum, pcd_mean)`` where the mean divides by ``|S1| + |S2|``.
    """
    A, B = _points(S1), _points(S2)
    if mode == "naive":
        a, b = _nn_sq_naive(A, B), _nn_sq_naive(B, A)
    elif mode == "accelerated":
        a, b = _nn_sq_tree(A, B), _nn_sq_tree(B, A)
    else:
        raise ValueError(f"unknown chamfer mode {mode!r}")
    # sorted summation keeps chamfer(A, B) == chamfer(B, A) bit for bit
    total = float(np.sum(np.sort(np.concatenate([a, b]))))
    return total, total / (len(A) + len(B))


# --------------------------------------------------------------------------
# coverage


def _segments(traj):
    if isinstance(traj, TrajectorySet):
        return traj.segments()
    starts, ends = traj
    return np.asarray(starts, dtype=np.float64).reshape(-1, 3), np.asarray(ends, dtype=np.float64).reshape(-1, 3)


def face_covered(mesh, face_index, segments, r_spray):
    """True iff some segment passes within ``r_spray`` (inclusive) of the face centroid."""
    if not r_spray > 0:
        raise ValueError(f"r_spray must be positive, got {r_spray}")
    starts, ends = _segments(segments)
    if len(starts) == 0:
        return False
    c = mesh.centroids()[face_index]
    d2, _ = segment_distance_sq(c[None, :], starts, ends)
    return bool(np.any(np.sqrt(d2) <= r_spray))


def covered_faces(mesh, traj, r_spray=DEFAULT_R_SPRAY, mode="accelerated"):
    """Boolean per face."""
    if not r_spray > 0:
        raise ValueError(f"r_spray must be positive, got {r_spray}")
    starts, ends = _segments(traj)
    cents = mesh.centroids()
    covered = np.zeros(len(cents), dtype=bool)
    if len(starts) == 0:
        return covered
    if mode == "naive":
        for j, c in enumerate(cents):
            d2, _ = segment_distance_sq(c[None, :], starts, ends)
            covered[j] = bool(np.any(np.sqrt(d2) <= r_spray))
    elif mode == "accelerated":
        grid = SegmentGrid(starts, ends, cell_size=r_spray, radius=r_spray)
        for j, c in enumerate(cents):
            cand = grid.query_candidates(c)
            if cand:
                d2, _ = segment_distance_sq(c[None, :], starts[cand], ends[cand])
                covered[j] = bool(np.any(np.sqrt(d2) <= r_spray))
    else:
        raise ValueError(f"unknown coverage mode {mode!r}")
    return covered


def overlap_coverage(mesh, traj, r_spray=DEFAULT_R_SPRAY, mode="accelerated"):
    if mesh.n_faces == 0:
        raise ValueError("mesh has no faces")
    return float(covered_faces(mesh, traj, r_spray, mode).sum()) / mesh.n_faces


def area_coverage(mesh, traj, r_spray=DEFAULT_R_SPRAY, mode="accelerated"):
    areas = mesh.areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero total area")
    cov = covered_faces(mesh, traj, r_spray, mode)
    return float(areas[cov].sum() / total)


# --------------------------------------------------------------------------
# smoothness


def jerk(positions):
    """Third forward differences of a position sequence at unit timestep."""
    p = np.asarray(positions, dtype=np.float64)
    return p[3:] - 3.0 * p[2:-1] + 3.0 * p[1:-2] - p[:-3]


def smoothness(traj):
    """Mean squared jerk over every stroke of length >= 4 (0 if there is none)."""
    strokes = traj.strokes if isinstance(traj, TrajectorySet) else traj
    sq = [(jerk(np.asarray(s)[:, :3]) ** 2).sum(axis=1) for s in strokes if len(s) >= 4]
    if not sq:
        return 0.0
    return float(np.concatenate(sq).mean())


def metrics_report(mesh, traj, reference, r_spray=DEFAULT_R_SPRAY):
    """All four metrics for ``traj`` against a reference trajectory on ``mesh``."""
    pcd_sum, pcd_mean = chamfer(traj.positions(), reference.positions())
    return MetricsReport(
        pcd_sum=pcd_sum,
        pcd_mean=pcd_mean,
        coverage_overlap=overlap_coverage(mesh, traj, r_spray),
        coverage_area=area_coverage(mesh, traj, r_spray),
        smoothness=smoothness(traj),
        r_spray=float(r_spray),
    )
