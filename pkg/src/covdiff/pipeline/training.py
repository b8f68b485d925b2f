"""Training loop for the noise-prediction objective."""

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from ..diffusion import cosine_schedule, q_sample_batch
from ..geometry import TriMesh, sample_surface
from ..numkernel import AdamState, Rng, adam_step
from ..policy import Policy, save_checkpoint
from ..trajectory import normalize_traj
from .dataset import DataError, trajectory_windows

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch: int = 128
    epochs: int = 200
    K: int = 100
    m_history: int = 4
    horizon: int = 16
    seed: int = 0
    cond_dropout: float = 0.0
    n_points: int = 5120
    variant: str = "previous"
    lr_schedule: str = "constant"

    LR_SCHEDULES = ("constant", "cosine")

    def __post_init__(self):
        for name in ("lr", "batch", "epochs", "K", "m_history", "horizon", "n_points"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.cond_dropout <= 1.0:
            raise ValueError(f"cond_dropout must lie in [0, 1], got {self.cond_dropout}")
        if self.variant not in Policy.VARIANTS:
            raise ValueError(f"variant must be one of {Policy.VARIANTS}, got {self.variant!r}")
        if self.lr_schedule not in self.LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {self.LR_SCHEDULES}, got {self.lr_schedule!r}")

    @classmethod
    def parse_values(cls, values):
        """Typed field values from a mapping of strings; unknown keys raise."""
        out = {}
        for key, raw in values.items():
            if key not in cls.__dataclass_fields__:
                raise KeyError(f"unknown config key {key!r}")
            default = getattr(cls, key)
            out[key] = str(raw) if isinstance(default, str) else type(default)(raw)
        return out

    @classmethod
    def from_mapping(cls, values, base=None):
        """Config from string values (config file or CLI) layered over ``base``."""
        return replace(base or cls(), **cls.parse_values(values))

    def to_dict(self):
        return asdict(self)


# Reduced sizes for a single desk machine; the full-scale values above stay
# the class defaults.
DESK = TrainConfig(batch=16, epochs=50)

# Memorizing a handful of objects in 50 epochs needs a larger, annealed step.
OVERFIT = replace(DESK, lr=1e-3, lr_schedule="cosine", n_points=1024)


def learning_rate(cfg, step, total_steps):
    """Step size for optimizer step ``step`` (0-based) of ``total_steps``."""
    if cfg.lr_schedule == "constant":
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def parse_config_text(text):
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = value
    return out


def cloud_seed(seed, index):
    return (int(seed) * 1_000_003 + int(index) * 7919 + 17) % (2**63)


@dataclass
class TrainingSet:
    clouds: list        # normalized (N, 3) point clouds, one per object
    X: np.ndarray       # (W, H, 6) normalized windows
    mask: np.ndarray    # (W, H)
    history: np.ndarray  # (W, 6 * m)
    obj: np.ndarray     # (W,) index into clouds
    sample_ids: list    # one per object


def build_training_set(manifest, cfg, samples=None):
    samples = manifest.split("train") if samples is None else samples
    if not samples:
        raise DataError("training split is empty")
    clouds, Xs, Ms, Hs, objs, ids = [], [], [], [], [], []
    for i, s in enumerate(samples):
        mesh = manifest.load_mesh(s)
        norm_mesh = TriMesh((mesh.vertices - s.offset) / s.scale, mesh.faces)
        clouds.append(sample_surface(norm_mesh, cfg.n_points, cloud_seed(cfg.seed, i)))
        traj = normalize_traj(manifest.load_traj(s), s.scale, s.offset)
        X, M, Hh = trajectory_windows(traj.flattened(), cfg.horizon, cfg.m_history)
        Xs.append(X)
        Ms.append(M)
        Hs.append(Hh)
        objs.append(np.full(len(X), i))
        ids.append(s.sample_id)
    return TrainingSet(clouds, np.concatenate(Xs), np.concatenate(Ms), np.concatenate(Hs), np.concatenate(objs), ids)


def train_policy(data, cfg, hook=None):
    """Fit a fresh :class:`Policy` on ``data``; returns ``(policy, epoch_losses)``.

    ``hook``, if given, is called once per optimizer step with a dict holding
    the batch rows, their object ids and the condition-dropout flags.
    """
    if cfg.m_history * 6 != 24:
        raise ValueError("the state encoder expects a 4-pose (24-value) history")
    policy = Policy(horizon=cfg.horizon, seed=cfg.seed, variant=cfg.variant)
    schedule = cosine_schedule(cfg.K)
    state = AdamState(policy.params)
    rng = Rng(cfg.seed + 1)
    n = len(data.X)
    total_steps = cfg.epochs * -(-n // cfg.batch)
    step = 0
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, cfg.batch):
            rows = order[start:start + cfg.batch]
            B = len(rows)
            k = rng.integers(1, cfg.K + 1, B)
            eps = rng.normal((B, cfg.horizon, 6))
            drop = rng.uniform(B) < cfg.cond_dropout if cfg.cond_dropout > 0 else None
            x_k = q_sample_batch(data.X[rows], k, eps, schedule)
            if hook is not None:
                hook({"epoch": epoch, "rows": rows, "objects": [data.sample_ids[o] for o in data.obj[rows]],
                      "drop": drop})
            loss, grads = policy.loss_and_grads(
                data.clouds, data.obj[rows], data.history[rows], x_k, k, eps, data.mask[rows], drop=drop)
            adam_step(policy.params, grads, state, learning_rate(cfg, step, total_steps))
            step += 1
            total += loss * B
            count += B
        losses.append(total / count)
        log.info("epoch %d loss %.6f", epoch + 1, losses[-1])
    return policy, losses


def write_loss_curve(path, losses):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, l in enumerate(losses, start=1):
            w.writerow([i, repr(float(l))])


def train(manifest, cfg, out_dir, hook=None):
    """Train on the manifest's train split and write ``policy.ckpt`` and
    ``loss.csv`` into ``out_dir``. Returns the checkpoint path."""
    os.makedirs(out_dir, exist_ok=True)
    data = build_training_set(manifest, cfg)
    policy, losses = train_policy(data, cfg, hook)
    ckpt = os.path.join(out_dir, "policy.ckpt")
    save_checkpoint(ckpt, policy, {"K": cfg.K, "n_points": cfg.n_points, "m_history": cfg.m_history,
                                   "train_ids": data.sample_ids})
    write_loss_curve(os.path.join(out_dir, "loss.csv"), losses)
    return ckpt, losses


def with_overrides(cfg, **kw):
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
