"""Command-line entry point.

Exit status is 0 on success, 1 on a usage error and 2 when input data is
missing or malformed.
"""

import argparse
import logging
import os
import sys

from ..geometry import ParseError, read_obj
from ..numkernel import NonFiniteError
from ..policy import load_checkpoint
from ..trajectory import TrajectoryFormatError, save_traj
from . import evaluation, inference, training
from .dataset import DataError, generate_synthetic_dataset, read_manifest

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

PRESETS = {"desk": training.DESK, "overfit": training.OVERFIT, "full": training.TrainConfig()}

# CLI flag -> TrainConfig field
TRAIN_FLAGS = {
    "lr": float,
    "batch": int,
    "epochs": int,
    "K": int,
    "horizon": int,
    "seed": int,
    "cond_dropout": float,
    "n_points": int,
    "variant": str,
    "lr_schedule": str,
}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    p = Parser(prog="covdiff", description="Diffusion-based spray trajectory generation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--horizon", type=int, default=16)

    t = sub.add_parser("train", help="train a policy on a manifest's train split")
    t.add_argument("--manifest", required=True)
    t.add_argument("--config", help="key = value file; flags below override it")
    t.add_argument("--out", required=True)
    t.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    for name, typ in TRAIN_FLAGS.items():
        flag = "--" + name.replace("_", "-")
        if name == "variant":
            t.add_argument(flag, choices=("previous", "zero", "none"))
        elif name == "lr_schedule":
            t.add_argument(flag, choices=training.TrainConfig.LR_SCHEDULES, dest=name)
        else:
            t.add_argument(flag, type=typ, dest=name)

    i = sub.add_parser("infer", help="generate a trajectory for a mesh or a whole split")
    src = i.add_mutually_exclusive_group(required=True)
    src.add_argument("--mesh", help="OBJ file; writes one CSV to --out")
    src.add_argument("--manifest", help="generate for every sample of --split into the --out directory")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--episodes", type=int, help="required with --mesh; defaults to ceil(GT poses / H) with --manifest")
    i.add_argument("--seed", type=int, required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--split", default="train", choices=("train", "test", "all"))
    i.add_argument("--guidance-scale", type=float, default=1.0)

    e = sub.add_parser("eval", help="score trajectories against ground truth")
    e.add_argument("--manifest", required=True)
    e.add_argument("--traj-dir", required=True)
    e.add_argument("--r-spray", type=float, default=0.05)
    e.add_argument("--out", required=True, help="directory for report.json and report.csv")
    e.add_argument("--split", default="all", choices=("train", "test", "all"))

    r = sub.add_parser("report", help="print the aggregate table of an eval run")
    r.add_argument("--run-dir", required=True)
    return p


def _train_config(args):
    cfg = PRESETS[args.preset]
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values = training.parse_config_text(fh.read())
        try:
            cfg = training.TrainConfig.from_mapping(values, base=cfg)
        except (KeyError, ValueError) as err:
            raise UsageError(f"{args.config}: {err}") from err
    flags = {name: getattr(args, name) for name in TRAIN_FLAGS}
    try:
        return training.with_overrides(cfg, **flags)
    except ValueError as err:
        raise UsageError(str(err)) from err


def cmd_gen_data(args):
    m = generate_synthetic_dataset(args.n, args.seed, args.out, horizon=args.horizon)
    print(f"wrote {len(m.samples)} samples to {os.path.join(args.out, 'manifest')}")


def cmd_train(args):
    cfg = _train_config(args)
    manifest = read_manifest(args.manifest)
    ckpt, losses = training.train(manifest, cfg, args.out)
    print(f"checkpoint {ckpt}; final loss {losses[-1]:.6g}")


def _infer_one(policy, meta, mesh, episodes, args):
    return inference.infer(mesh, policy, episodes, args.seed, K=meta.get("K", 100),
                           n_points=meta.get("n_points", inference.N_POINTS),
                           guidance_scale=args.guidance_scale)


def cmd_infer(args):
    if args.episodes is not None and args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    if args.mesh and args.episodes is None:
        raise UsageError("--episodes is required with --mesh")
    policy, meta = load_checkpoint(args.ckpt)
    if args.mesh:
        traj = _infer_one(policy, meta, read_obj(args.mesh), args.episodes, args)
        parent = os.path.dirname(os.path.abspath(args.out))
        os.makedirs(parent, exist_ok=True)
        save_traj(args.out, traj)
        print(f"wrote {traj.n_poses} poses to {args.out}")
        return
    manifest = read_manifest(args.manifest)
    samples = manifest.samples if args.split == "all" else manifest.split(args.split)
    os.makedirs(args.out, exist_ok=True)
    for s in samples:
        episodes = args.episodes or inference.default_episodes(manifest.load_traj(s).n_poses, policy.horizon)
        traj = _infer_one(policy, meta, manifest.load_mesh(s), episodes, args)
        save_traj(evaluation.trajectory_path(args.out, s), traj)
    print(f"wrote {len(samples)} trajectories to {args.out}")


def cmd_eval(args):
    if not args.r_spray > 0:
        raise UsageError("--r-spray must be positive")
    report = evaluation.evaluate(read_manifest(args.manifest), args.split, args.traj_dir, args.r_spray)
    path = evaluation.write_report(args.out, report)
    print(report.table_text())
    print(f"wrote {path}")


def cmd_report(args):
    report = evaluation.read_report(args.run_dir)
    print(report.table_text())
    path = os.path.join(args.run_dir, evaluation.TABLE_NAME)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report.table_csv())
    print(f"wrote {path}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verbose:
            logging.basicConfig(level=logging.INFO, format="%(message)s")
        COMMANDS[args.command](args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as err:
        # --help exits with 0 through argparse
        return EXIT_OK if not err.code else EXIT_USAGE
    except (DataError, ParseError, TrajectoryFormatError, NonFiniteError, OSError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
