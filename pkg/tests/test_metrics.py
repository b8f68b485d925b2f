import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from covdiff import geometry as geo
from covdiff import metrics as mt
from covdiff.numkernel import Rng
from covdiff.trajectory import TrajectorySet


def line_traj(xs, y=0.0, z=0.0):
    s = np.zeros((len(xs), 6))
    s[:, 0] = xs
    s[:, 1] = y
    s[:, 2] = z
    s[:, 5] = 1.0
    return TrajectorySet([s])


def brute_chamfer(A, B):
    # independent double loop
    total = 0.0
    for a in A:
        total += min(float(((a - b) ** 2).sum()) for b in B)
    for b in B:
        total += min(float(((a - b) ** 2).sum()) for a in A)
    return total


class TestChamfer:
    def test_single_points(self):
        total, mean = mt.chamfer([[0, 0, 0]], [[3, 4, 0]])
        assert total == 50.0
        assert mean == 25.0

    def test_identical_sets(self):
        S = Rng(1).uniform((100, 3))
        assert mt.chamfer(S, S) == (0.0, 0.0)

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            mt.chamfer(np.zeros((0, 3)), [[0, 0, 0]])

    def test_matches_double_loop(self):
        rng = Rng(2)
        A, B = rng.uniform((40, 3)), rng.uniform((55, 3))
        assert mt.chamfer(A, B, "naive")[0] == pytest.approx(brute_chamfer(A, B), rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 300), st.integers(1, 300))
    def test_naive_and_accelerated_agree(self, seed, n1, n2):
        rng = Rng(seed)
        A, B = rng.uniform((n1, 3), -2, 2), rng.uniform((n2, 3), -2, 2)
        naive = mt.chamfer(A, B, "naive")[0]
        fast = mt.chamfer(A, B, "accelerated")[0]
        assert abs(naive - fast) <= 1e-9 * max(1.0, naive)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_symmetric(self, seed):
        rng = Rng(seed)
        A, B = rng.uniform((70, 3)), rng.uniform((33, 3))
        for mode in ("naive", "accelerated"):
            assert mt.chamfer(A, B, mode) == mt.chamfer(B, A, mode)

    def test_translation_invariant(self):
        rng = Rng(3)
        A, B = rng.uniform((60, 3)), rng.uniform((60, 3))
        shift = np.array([10.0, -4.0, 2.5])
        assert mt.chamfer(A + shift, B + shift)[0] == pytest.approx(mt.chamfer(A, B)[0], rel=1e-9)


class TestCoverage:
    def face_at(self, c):
        # small triangle whose centroid is exactly c
        c = np.asarray(c, dtype=float)
        d = np.array([[0.25, 0, 0], [-0.25, 0, 0.125], [0, 0, -0.125]])
        return geo.TriMesh(c + d, [[0, 1, 2]])

    def test_distance_equal_to_radius_counts(self):
        # dyadic values keep the centroid and distance exact
        mesh = self.face_at([0.5, 0.0625, 0.0])
        assert mesh.centroids()[0].tolist() == [0.5, 0.0625, 0.0]
        seg = (np.array([[0.0, 0.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
        assert mt.face_covered(mesh, 0, seg, 0.0625)
        for mode in ("naive", "accelerated"):
            assert mt.covered_faces(mesh, seg, 0.0625, mode).tolist() == [True]

    def test_just_outside_radius(self):
        mesh = self.face_at([0.5, 0.0625 + 2**-20, 0.0])
        seg = (np.array([[0.0, 0.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
        assert not mt.face_covered(mesh, 0, seg, 0.0625)

    def test_area_weighting(self):
        s2, s6 = math.sqrt(2.0), math.sqrt(6.0)
        verts = [[0, 0, 0], [s2, 0, 0], [0, s2, 0], [10, 0, 0], [10 + s6, 0, 0], [10, s6, 0]]
        mesh = geo.TriMesh(verts, [[0, 1, 2], [3, 4, 5]])
        c = mesh.centroids()[1]
        seg = (c[None, :], (c + [0, 0, 0.01])[None, :])
        assert mt.overlap_coverage(mesh, seg, 0.05) == 0.5
        assert mt.area_coverage(mesh, seg, 0.05) == pytest.approx(0.75, abs=1e-12)

    def test_empty_trajectory_covers_nothing(self):
        mesh = geo.make_cuboid(1, 1, 1)
        assert mt.overlap_coverage(mesh, TrajectorySet([]), 0.1) == 0.0

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            mt.covered_faces(geo.make_cuboid(1, 1, 1), line_traj([0, 1]), 0.0)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.02, 0.3))
    def test_naive_and_grid_identical(self, seed, r):
        rng = Rng(seed)
        mesh = geo.make_cuboid(1, 1, 1, divisions=5)
        pts = rng.uniform((60, 3), -0.2, 1.2)
        starts, ends = pts[:-1], pts[1:]
        naive = mt.covered_faces(mesh, (starts, ends), r, "naive")
        fast = mt.covered_faces(mesh, (starts, ends), r, "accelerated")
        assert naive.tolist() == fast.tolist()

    def test_monotone_in_radius(self):
        mesh = geo.make_cuboid(1, 1, 1, divisions=6)
        traj = line_traj(np.linspace(-0.2, 1.2, 30), y=0.5, z=1.1)
        values = [mt.overlap_coverage(mesh, traj, r) for r in (0.05, 0.1, 0.2, 0.4, 0.8)]
        assert values == sorted(values)
        areas = [mt.area_coverage(mesh, traj, r) for r in (0.05, 0.1, 0.2, 0.4, 0.8)]
        assert areas == sorted(areas)

    def test_monotone_in_added_segments(self):
        mesh = geo.make_cuboid(1, 1, 1, divisions=6)
        pts = Rng(4).uniform((40, 3))
        small = mt.covered_faces(mesh, (pts[:19], pts[1:20]), 0.1)
        large = mt.covered_faces(mesh, (pts[:-1], pts[1:]), 0.1)
        assert np.all(large[small])

    def test_rigid_motion_invariant(self):
        mesh = geo.make_cuboid(1, 1, 1, divisions=4)
        pts = Rng(5).uniform((30, 3))
        R = Rotation.from_euler("xyz", [0.3, -1.1, 2.0]).as_matrix()
        t = np.array([3.0, -1.0, 0.5])
        moved = geo.TriMesh(mesh.vertices @ R.T + t, mesh.faces)
        mp = pts @ R.T + t
        a = mt.covered_faces(mesh, (pts[:-1], pts[1:]), 0.15)
        b = mt.covered_faces(moved, (mp[:-1], mp[1:]), 0.15)
        # only faces at distance ~r could flip through rounding
        assert (a != b).sum() <= 1


class TestSmoothness:
    def test_cubic(self):
        t = np.arange(10, dtype=float)
        assert mt.smoothness(line_traj(t**3)) == pytest.approx(36.0, abs=1e-9)

    def test_linear_and_quadratic_are_zero(self):
        t = np.arange(10, dtype=float)
        assert mt.smoothness(line_traj(2 * t + 1)) == 0.0
        assert mt.smoothness(line_traj(t**2)) == 0.0

    def test_short_strokes_ignored(self):
        assert mt.smoothness(line_traj([0, 5, 1])) == 0.0

    def test_strokes_not_joined(self):
        t = np.arange(6, dtype=float)
        a = line_traj(t).strokes[0]
        b = line_traj(t + 100).strokes[0]
        assert mt.smoothness(TrajectorySet([a, b])) == 0.0


class TestReport:
    def test_perfect_self_report(self):
        mesh = geo.make_cuboid(1, 1, 1)
        traj = line_traj(np.linspace(0, 1, 11), 0.5, 0.5)
        rep = mt.metrics_report(mesh, traj, traj, 0.05)
        assert rep.pcd_sum == 0.0
        assert rep.smoothness == pytest.approx(0.0, abs=1e-20)
        back = mt.MetricsReport.from_dict(json.loads(rep.to_json()))
        assert back == rep
