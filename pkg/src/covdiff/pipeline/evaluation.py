"""Per-sample metrics over a manifest split, aggregate tables and the seeded
random-pose baseline used as a reference point."""

import csv
import io
import json
import os
import statistics
from dataclasses import dataclass, field

import numpy as np

from ..metrics import DEFAULT_R_SPRAY, MetricsReport, metrics_report
from ..numkernel import Rng
from ..trajectory import TrajectorySet, load_traj
from .dataset import DataError

METRIC_FIELDS = ("pcd_sum", "pcd_mean", "coverage_overlap", "coverage_area", "smoothness")
REPORT_NAME = "report.json"
TABLE_NAME = "report.csv"


@dataclass
class RunReport:
    """Per-sample metrics in manifest order plus mean and (population) std."""

    sample_ids: list
    rows: list
    seeds: dict = field(default_factory=dict)
    r_spray: float = DEFAULT_R_SPRAY

    def aggregate(self):
        out = {}
        for name in METRIC_FIELDS:
            # statistics works in exact rationals, so identical rows give std 0 exactly
            vals = [float(getattr(r, name)) for r in self.rows]
            out[name] = {"mean": statistics.mean(vals), "std": statistics.pstdev(vals)}
        return out

    def to_dict(self):
        return {
            "r_spray": self.r_spray,
            "seeds": dict(self.seeds),
            "samples": [dict(id=sid, **json.loads(r.to_json())) for sid, r in zip(self.sample_ids, self.rows)],
            "aggregate": self.aggregate(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        rows = [MetricsReport.from_dict(s) for s in d["samples"]]
        return cls([s["id"] for s in d["samples"]], rows, dict(d.get("seeds", {})), float(d["r_spray"]))

    def table_csv(self):
        """Per-sample rows followed by ``mean`` and ``std`` rows."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("sample",) + METRIC_FIELDS)
        for sid, r in zip(self.sample_ids, self.rows):
            w.writerow([sid] + [repr(getattr(r, f)) for f in METRIC_FIELDS])
        agg = self.aggregate()
        for stat in ("mean", "std"):
            w.writerow([stat] + [repr(agg[f][stat]) for f in METRIC_FIELDS])
        return buf.getvalue()

    def table_text(self):
        agg = self.aggregate()
        width = max(len(f) for f in METRIC_FIELDS)
        lines = [f"{'metric':<{width}}  {'mean':>14}  {'std':>14}"]
        for f in METRIC_FIELDS:
            lines.append(f"{f:<{width}}  {agg[f]['mean']:>14.6g}  {agg[f]['std']:>14.6g}")
        return "\n".join(lines)


def random_pose_baseline(mesh, n_poses, seed):
    """``n_poses`` positions uniform in the mesh bounding box with uniformly
    random unit orientations, as one stroke."""
    rng = Rng(seed)
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    pos = lo + (hi - lo) * rng.uniform((n_poses, 3))
    ori = rng.normal((n_poses, 3))
    ori /= np.linalg.norm(ori, axis=1, keepdims=True)
    return TrajectorySet([np.hstack([pos, ori])])


def trajectory_path(traj_dir, sample):
    return os.path.join(traj_dir, sample.sample_id + ".csv")


def evaluate(manifest, split, traj_dir, r_spray=DEFAULT_R_SPRAY, seeds=None):
    """Score ``traj_dir/<sample_id>.csv`` against ground truth for every
    sample of ``split`` (``"train"``, ``"test"`` or ``"all"``)."""
    samples = manifest.samples if split == "all" else manifest.split(split)
    if not samples:
        raise DataError(f"split {split!r} has no samples")
    ids, rows = [], []
    for s in samples:
        path = trajectory_path(traj_dir, s)
        if not os.path.exists(path):
            raise DataError(f"sample {s.sample_id}: missing trajectory file {path}")
        traj = load_traj(path)
        if traj.n_poses == 0:
            # coverage would be 0, but Chamfer distance is undefined on an empty set
            raise DataError(f"sample {s.sample_id}: empty trajectory, PCD is undefined")
        rows.append(metrics_report(manifest.load_mesh(s), traj, manifest.load_traj(s), r_spray))
        ids.append(s.sample_id)
    return RunReport(ids, rows, dict(seeds or {}), float(r_spray))


def write_report(out_dir, report):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, REPORT_NAME)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    with open(os.path.join(out_dir, TABLE_NAME), "w", encoding="utf-8", newline="") as fh:
        fh.write(report.table_csv())
    return path


def read_report(path):
    if os.path.isdir(path):
        path = os.path.join(path, REPORT_NAME)
    with open(path, encoding="utf-8") as fh:
        return RunReport.from_dict(json.load(fh))
