"""Train a policy briefly on four synthetic objects and generate a path.

This uses a deliberately short run so it finishes in well under a minute on one
core; the numbers show the loop working, not a converged model. Use the
``overfit`` preset (``covdiff train --preset overfit``) for the longer run.

    python3 demos/03_train_and_generate.py
"""

import tempfile
from dataclasses import replace

from covdiff import metrics as mt
from covdiff.pipeline import dataset as ds
from covdiff.pipeline import inference as inf
from covdiff.pipeline import training as tr
from covdiff.pipeline.evaluation import random_pose_baseline

cfg = replace(tr.OVERFIT, epochs=8, n_points=256)

with tempfile.TemporaryDirectory() as root:
    manifest = ds.generate_synthetic_dataset(5, seed=11, out_dir=root)
    data = tr.build_training_set(manifest, cfg)
    print(f"{len(data.X)} training windows from {len(data.clouds)} objects")

    policy, losses = tr.train_policy(data, cfg)
    print("loss per epoch:", " ".join(f"{l:.3f}" for l in losses))

    s = manifest.split("train")[0]
    mesh, gt = manifest.load_mesh(s), manifest.load_traj(s)
    gen = inf.infer(mesh, policy, inf.default_episodes(gt.n_poses, cfg.horizon), seed=5, n_points=cfg.n_points)
    base = random_pose_baseline(mesh, gen.n_poses, seed=3)
    for name, t in (("generated", gen), ("random", base)):
        print(f"{name:<10} pcd {mt.chamfer(t.positions(), gt.positions())[0]:.4f}"
              f"  coverage {mt.overlap_coverage(mesh, t):.3f}  smoothness {mt.smoothness(t):.2e}")
