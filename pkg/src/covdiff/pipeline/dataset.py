"""Synthetic cuboid/frame dataset with boustrophedon ground truth, the
manifest format, and extraction of training windows."""

import math
import os
from dataclasses import dataclass

import numpy as np

from ..geometry import make_cuboid, make_frame, normalize_to_unit, read_obj, write_obj
from ..numkernel import Rng
from ..trajectory import TrajectorySet, last_m_flat, load_traj, pad_and_mask, save_traj

R_SPRAY = 0.05
PITCH_FACTOR = 0.8  # raster pitch = PITCH_FACTOR * 2 * r_spray
POSE_STEP = 0.05
MANIFEST_HEADER = "# mesh,trajectory,category,scale,offset_x,offset_y,offset_z,split"


class DataError(ValueError):
    """Dataset content is missing or malformed."""


# --------------------------------------------------------------------------
# boustrophedon ground truth


def raster_corners(origin, u, v, pitch):
    """Corner points of a back-and-forth raster over the rectangle
    ``origin + a*u + b*v``: passes run along ``u`` and are stacked along ``v``.

    Passes sit at the centres of ``ceil(|v| / pitch)`` equal bands, so every
    point of the rectangle lies within half a band of a pass.
    """
    lv = float(np.linalg.norm(v))
    n = max(1, math.ceil(lv / pitch - 1e-12))
    corners = []
    for i in range(n):
        b = (i + 0.5) / n
        a0, a1 = (0.0, 1.0) if i % 2 == 0 else (1.0, 0.0)
        corners.append(origin + a0 * u + b * v)
        corners.append(origin + a1 * u + b * v)
    return np.array(corners)


def _pieces(corners, step):
    lengths = np.linalg.norm(np.diff(corners, axis=0), axis=1)
    return lengths, np.maximum(1, np.ceil(lengths / step - 1e-9).astype(int))


def _densify(corners, pieces):
    pts = [corners[:1]]
    for a, b, n in zip(corners[:-1], corners[1:], pieces):
        t = np.arange(1, n + 1)[:, None] / n
        pts.append(a + t * (b - a))
    return np.concatenate(pts)


def boustrophedon(panels, pitch, step, multiple=1):
    """One stroke per panel ``(origin, u, v, inward_normal)``.

    Every polyline edge is split into near-``step`` pieces; extra splits go to
    the currently coarsest edges until the total pose count is a multiple of
    ``multiple``.
    """
    polylines = [raster_corners(o, u, v, pitch) for o, u, v, _ in panels]
    lengths, pieces = [], []
    for c in polylines:
        l, p = _pieces(c, step)
        lengths.append(l)
        pieces.append(p)
    total = sum(int(p.sum()) + 1 for p in pieces)
    for _ in range((-total) % multiple):
        best = max(
            ((lengths[s][e] / pieces[s][e], -s, -e) for s in range(len(pieces)) for e in range(len(pieces[s])))
        )
        pieces[-best[1]][-best[2]] += 1
    strokes = []
    for (o, u, v, nrm), c, p in zip(panels, polylines, pieces):
        pos = _densify(c, p)
        ori = np.broadcast_to(nrm / np.linalg.norm(nrm), pos.shape)
        strokes.append(np.hstack([pos, ori]))
    return strokes


def cuboid_panels(w, h, d, origin=(0.0, 0.0, 0.0)):
    o = np.asarray(origin, dtype=np.float64)
    X, Y, Z = np.array([w, 0, 0.0]), np.array([0, h, 0.0]), np.array([0, 0, d * 1.0])
    ex, ey, ez = np.eye(3)
    return [
        (o + Z, X, Y, -ez),      # top
        (o + Y, X, Z, -ey),      # back
        (o + X, Y, Z, -ex),      # right
        (o, X, Z, ey),           # front
        (o, Y, Z, ex),           # left
        (o, X, Y, ez),           # bottom
    ]


def frame_panels(outer, thickness, origin=(0.0, 0.0, 0.0)):
    o = np.asarray(origin, dtype=np.float64) + np.array([-outer / 2, -outer / 2, 0.0])
    X, Y = np.array([outer, 0, 0.0]), np.array([0, outer, 0.0])
    ez = np.array([0, 0, 1.0])
    return [
        (o + thickness * ez, X, Y, -ez),  # front
        (o, X, Y, ez),                    # back
    ]


# --------------------------------------------------------------------------
# manifest


@dataclass
class Sample:
    mesh_path: str
    traj_path: str
    category: str
    scale: float
    offset: np.ndarray
    split: str

    @property
    def sample_id(self):
        return os.path.splitext(os.path.basename(self.traj_path))[0]


@dataclass
class DatasetManifest:
    samples: list
    root: str = "."

    def split(self, tag):
        return [s for s in self.samples if s.split == tag]

    def path(self, rel):
        return rel if os.path.isabs(rel) else os.path.join(self.root, rel)

    def load_mesh(self, sample):
        return read_obj(self.path(sample.mesh_path))

    def load_traj(self, sample):
        return load_traj(self.path(sample.traj_path))


def assign_splits(n):
    """80/20 split by count, test size rounded down; the last samples are test."""
    n_test = n // 5
    return ["train"] * (n - n_test) + ["test"] * n_test


def write_manifest(path, manifest):
    lines = [MANIFEST_HEADER]
    for s in manifest.samples:
        ox, oy, oz = (repr(float(v)) for v in s.offset)
        lines.append(",".join([s.mesh_path, s.traj_path, s.category, repr(float(s.scale)), ox, oy, oz, s.split]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path):
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 8:
                raise DataError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                scale = float(parts[3])
                offset = np.array([float(p) for p in parts[4:7]])
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed number") from None
            if parts[7] not in ("train", "test"):
                raise DataError(f"{path}:{lineno}: split must be train or test, got {parts[7]!r}")
            samples.append(Sample(parts[0], parts[1], parts[2], scale, offset, parts[7]))
    return DatasetManifest(samples, root=os.path.dirname(os.path.abspath(path)))


# --------------------------------------------------------------------------
# generation


def synth_object(index, rng, horizon, r_spray=R_SPRAY, step=POSE_STEP):
    """Mesh and ground truth for object ``index``: even indices are cuboids,
    odd indices frames."""
    pitch = PITCH_FACTOR * 2.0 * r_spray
    origin = rng.uniform(3, -0.5, 0.5)
    if index % 2 == 0:
        w, h, d = rng.uniform(3, 0.15, 0.30)
        mesh = make_cuboid(w, h, d, divisions=4)
        mesh = type(mesh)(mesh.vertices + origin, mesh.faces)
        panels = cuboid_panels(w, h, d, origin)
        category = "cuboid"
    else:
        outer = rng.uniform(None, 0.25, 0.40)
        inner = outer * rng.uniform(None, 0.40, 0.70)
        thickness = rng.uniform(None, 0.02, 0.05)
        mesh = make_frame(outer, inner, thickness, divisions=4)
        mesh = type(mesh)(mesh.vertices + origin, mesh.faces)
        panels = frame_panels(outer, thickness, origin)
        category = "window"
    strokes = boustrophedon(panels, pitch, step, multiple=horizon)
    return mesh, TrajectorySet(strokes, object_id=f"obj{index:03d}"), category


def generate_synthetic_dataset(n, seed, out_dir, horizon=16, r_spray=R_SPRAY):
    if n < 5:
        raise ValueError(f"need at least 5 objects, got {n}")
    try:
        os.makedirs(os.path.join(out_dir, "meshes"), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "gt"), exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create dataset directory {out_dir}: {e}") from e
    rng = Rng(seed)
    splits = assign_splits(n)
    samples = []
    for i in range(n):
        mesh, traj, category = synth_object(i, rng, horizon, r_spray)
        _, scale, offset = normalize_to_unit(mesh)
        sid = f"obj{i:03d}"
        mesh_rel = os.path.join("meshes", sid + ".obj")
        traj_rel = os.path.join("gt", sid + ".csv")
        with open(os.path.join(out_dir, mesh_rel), "w", encoding="utf-8") as fh:
            fh.write(write_obj(mesh))
        save_traj(os.path.join(out_dir, traj_rel), traj)
        samples.append(Sample(mesh_rel, traj_rel, category, scale, offset, splits[i]))
    manifest = DatasetManifest(samples, root=os.path.abspath(out_dir))
    write_manifest(os.path.join(out_dir, "manifest"), manifest)
    return manifest


# --------------------------------------------------------------------------
# training windows


def trajectory_windows(sequence, horizon, m=4):
    """Every window of ``horizon`` consecutive poses (shorter ones at the end
    are zero-padded) with the ``m`` poses before it as history."""
    seq = np.asarray(sequence, dtype=np.float64)
    wins = [seq[s:s + horizon] for s in range(len(seq))]
    hist = np.stack([last_m_flat(seq[:s], m) for s in range(len(seq))])
    batch = pad_and_mask(wins, horizon)
    return batch.X, batch.mask, hist
