"""Autoregressive trajectory generation: one diffusion episode per segment,
each conditioned on the tail of the previous one."""

import math

import numpy as np

from ..diffusion import cosine_schedule, sample
from ..geometry import TriMesh, normalize_to_unit, sample_surface
from ..numkernel import NonFiniteError
from ..trajectory import TrajectorySet, concat_segments, denormalize_traj, last_m_flat, unit_orientations

N_POINTS = 5120
# normalized positions lie in the unit box and orientations in [-1, 1];
# bounding the clean-sample estimate keeps the first reverse steps (where
# alpha_bar is ~1e-7) from amplifying noise errors
CLIP_DENOISED = np.array([0.5, 0.5, 0.5, 1.0, 1.0, 1.0])


def episode_seed(seed, episode):
    return (int(seed) * 1_000_033 + int(episode) * 104_729 + 1) % (2**63)


def default_episodes(gt_pose_count, horizon):
    return max(1, math.ceil(gt_pose_count / horizon))


def generate(policy, cloud, episodes, seed, K=100, m=4, guidance_scale=1.0, hook=None):
    """Segments for a normalized point cloud, in normalized coordinates.

    ``hook(episode, history_vec, segment)`` sees each episode's conditioning
    history and raw output.
    """
    if episodes < 1:
        raise ValueError(f"episode count must be >= 1, got {episodes}")
    schedule = cosine_schedule(K)
    geometry = policy.encode_geometry(cloud)
    segments = []
    history = last_m_flat(None, m)
    shape = (policy.horizon, 6)
    for e in range(1, episodes + 1):
        cond = policy.condition(geometry=geometry, history_vec=history)
        try:
            seg = sample(policy.denoise, cond, shape, schedule, episode_seed(seed, e), guidance_scale,
                         clip_denoised=CLIP_DENOISED)
        except NonFiniteError as err:
            raise NonFiniteError(f"episode {e}: {err}") from err
        if hook is not None:
            hook(e, history, seg)
        segments.append(seg)
        history = last_m_flat(seg, m)
    return segments


def infer(target, policy, episodes, seed, K=100, n_points=N_POINTS, guidance_scale=1.0, hook=None):
    """Trajectory for a mesh or raw point cloud, in the target's own units.

    The target is normalized to the unit box, a seeded cloud is drawn (meshes)
    or used as is (clouds), and the stitched output is mapped back with unit
    orientations.
    """
    if isinstance(target, TriMesh):
        norm_mesh, scale, offset = normalize_to_unit(target)
        cloud = sample_surface(norm_mesh, n_points, seed)
    else:
        cloud, scale, offset = normalize_to_unit(np.asarray(target, dtype=np.float64))
    segments = generate(policy, cloud, episodes, seed, K=K, guidance_scale=guidance_scale, hook=hook)
    stroke = unit_orientations(concat_segments(segments))
    return denormalize_traj(TrajectorySet([stroke]), scale, offset)
