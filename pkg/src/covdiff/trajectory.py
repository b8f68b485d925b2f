"""6-DoF spray strokes: containers, stitching, padding, history vectors,
normalisation and the CSV exchange format.

A pose is a row ``[px, py, pz, ox, oy, oz]``: position in meters followed by
the unit tool-approach direction. A stroke is an ``(n, 6)`` float64 array.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

POSE_DIM = 6
CSV_HEADER = ["stroke", "step", "px", "py", "pz", "ox", "oy", "oz"]
DEDUP_TOL = 1e-9
UNIT_TOL = 1e-3
# orientations this close to unit are kept bit for bit on read
UNIT_EXACT_TOL = 1e-12


class TrajectoryFormatError(ValueError):
    def __init__(self, row, msg):
        super().__init__(f"row {row}: {msg}")
        self.row = row


def as_stroke(poses):
    s = np.asarray(poses, dtype=np.float64)
    if s.ndim == 1 and s.size == POSE_DIM:
        s = s.reshape(1, POSE_DIM)
    if s.ndim != 2 or s.shape[1] != POSE_DIM:
        raise ValueError(f"stroke must have shape (n, {POSE_DIM}), got {s.shape}")
    return s


@dataclass
class TrajectorySet:
    strokes: list
    object_id: str = ""
    scale: float = 1.0
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.strokes = [as_stroke(s) for s in self.strokes]
        self.offset = np.asarray(self.offset, dtype=np.float64).reshape(3)

    @property
    def n_poses(self):
        return sum(len(s) for s in self.strokes)

    def positions(self):
        if not self.strokes:
            return np.zeros((0, 3))
        return np.concatenate([s[:, :3] for s in self.strokes])

    def segments(self):
        """Consecutive-pose position pairs inside each stroke; never across strokes."""
        starts = [s[:-1, :3] for s in self.strokes if len(s) > 1]
        ends = [s[1:, :3] for s in self.strokes if len(s) > 1]
        if not starts:
            return np.zeros((0, 3)), np.zeros((0, 3))
        return np.concatenate(starts), np.concatenate(ends)

    def flattened(self):
        """All strokes stitched into one execution-order stroke."""
        return concat_segments(self.strokes)

    def structurally_equal(self, other, atol=0.0):
        return len(self.strokes) == len(other.strokes) and all(
            a.shape == b.shape and np.allclose(a, b, rtol=0.0, atol=atol)
            for a, b in zip(self.strokes, other.strokes)
        )


def concat_segments(segments):
    """Append segments in order, dropping a start pose that repeats the
    previous segment's final pose (all six components within 1e-9)."""
    segments = [as_stroke(s) for s in segments]
    if not segments:
        raise ValueError("need at least one segment to concatenate")
    out = [segments[0]]
    last = segments[0][-1]
    for seg in segments[1:]:
        if len(seg) == 0:
            continue
        if np.all(np.abs(seg[0] - last) <= DEDUP_TOL):
            seg = seg[1:]
        if len(seg):
            out.append(seg)
            last = seg[-1]
    return np.concatenate(out)


@dataclass
class PaddedBatch:
    X: np.ndarray     # (B, H, 6)
    mask: np.ndarray  # (B, H) of 0.0 / 1.0

    def unpad(self):
        return [self.X[i, : int(self.mask[i].sum())].copy() for i in range(len(self.X))]


def pad_and_mask(strokes, H):
    strokes = [as_stroke(s) for s in strokes]
    X = np.zeros((len(strokes), H, POSE_DIM))
    mask = np.zeros((len(strokes), H))
    for i, s in enumerate(strokes):
        if len(s) > H:
            raise ValueError(f"stroke {i} has {len(s)} poses, longer than horizon {H}")
        X[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return PaddedBatch(X, mask)


def last_m_flat(history, m=4):
    """Last ``m`` poses flattened oldest-first, zero-left-padded to ``6*m``."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    out = np.zeros((m, POSE_DIM))
    if history is not None and len(history):
        h = as_stroke(history)[-m:]
        out[m - len(h):] = h
    return out.ravel()


def normalize_traj(traj, scale, offset):
    """Positions mapped to ``(p - offset) / scale``; orientations untouched."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    offset = np.asarray(offset, dtype=np.float64)
    strokes = []
    for s in traj.strokes:
        t = s.copy()
        t[:, :3] = (s[:, :3] - offset) / scale
        strokes.append(t)
    return TrajectorySet(strokes, traj.object_id, scale, offset)


def denormalize_traj(traj, scale, offset):
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    offset = np.asarray(offset, dtype=np.float64)
    strokes = []
    for s in traj.strokes:
        t = s.copy()
        t[:, :3] = s[:, :3] * scale + offset
        strokes.append(t)
    return TrajectorySet(strokes, traj.object_id, 1.0, np.zeros(3))


def unit_orientations(stroke):
    """Copy of ``stroke`` with orientation rows rescaled to unit length."""
    s = as_stroke(stroke).copy()
    n = np.linalg.norm(s[:, 3:], axis=1, keepdims=True)
    s[:, 3:] = np.where(n > 0, s[:, 3:] / np.where(n > 0, n, 1.0), np.array([0.0, 0.0, 1.0]))
    return s


# --------------------------------------------------------------------------
# CSV


def read_traj_csv(text):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise TrajectoryFormatError(1, "missing header") from None
    if [h.strip() for h in header] != CSV_HEADER:
        raise TrajectoryFormatError(1, f"expected header {','.join(CSV_HEADER)}")
    strokes = {}
    last_step = {}
    order = []
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_HEADER):
            raise TrajectoryFormatError(rowno, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            sid = int(row[0])
            step = int(row[1])
            vals = [float(c) for c in row[2:]]
        except ValueError:
            raise TrajectoryFormatError(rowno, "malformed number") from None
        if not all(math.isfinite(v) for v in vals):
            raise TrajectoryFormatError(rowno, "non-finite value")
        if sid in last_step and step <= last_step[sid]:
            raise TrajectoryFormatError(rowno, f"step {step} not increasing in stroke {sid}")
        o = np.array(vals[3:])
        norm = float(np.linalg.norm(o))
        if abs(norm - 1.0) > UNIT_TOL:
            raise TrajectoryFormatError(rowno, f"orientation norm {norm:.6g} is not unit")
        if sid not in strokes:
            strokes[sid] = []
            order.append(sid)
        strokes[sid].append(vals[:3] + list(o if abs(norm - 1.0) <= UNIT_EXACT_TOL else o / norm))
        last_step[sid] = step
    return TrajectorySet([np.array(strokes[s]) for s in order])


def write_traj_csv(traj):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for sid, s in enumerate(traj.strokes):
        for step, pose in enumerate(s):
            w.writerow([sid, step] + [f"{v:.17g}" for v in pose])
    return buf.getvalue()


def load_traj(path):
    with open(path, encoding="utf-8") as fh:
        return read_traj_csv(fh.read())


def save_traj(path, traj):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(write_traj_csv(traj))
