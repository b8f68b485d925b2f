"""Cosine noise schedule, forward corruption, masked noise loss and the DDIM
reverse process.

Step ``k = 0`` is clean data; ``alpha_bar`` holds ``K + 1`` entries.
"""

import math
from dataclasses import dataclass

import numpy as np

from .numkernel import NonFiniteError, Rng

COSINE_OFFSET = 0.008
MIN_STEP_RATIO = 0.001


@dataclass(frozen=True)
class NoiseSchedule:
    K: int
    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if len(ab) != self.K + 1:
            raise ValueError(f"alpha_bar needs K + 1 = {self.K + 1} entries, got {len(ab)}")
        if ab[0] != 1.0 or np.any(ab <= 0) or np.any(ab > 1) or np.any(np.diff(ab) >= 0):
            raise ValueError("alpha_bar must start at 1 and decrease strictly inside (0, 1]")
        object.__setattr__(self, "alpha_bar", ab)


@dataclass(frozen=True)
class DiffusionConfig:
    K: int = 100
    schedule: str = "cosine"
    eta: float = 0.0
    guidance_scale: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.schedule != "cosine":
            raise ValueError(f"unsupported schedule {self.schedule!r}")
        if self.guidance_scale < 0:
            raise ValueError("guidance_scale must be >= 0")


def cosine_schedule(K):
    """``alpha_bar_k = f(k) / f(0)`` with ``f(k) = cos^2(((k/K + s) / (1 + s)) * pi/2)``,
    ``s = 0.008``, and each per-step ratio floored at 0.001."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    k = np.arange(K + 1, dtype=np.float64)
    f = np.cos((k / K + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * math.pi / 2.0) ** 2
    raw = f / f[0]
    ratios = np.maximum(raw[1:] / raw[:-1], MIN_STEP_RATIO)
    ab = np.empty(K + 1)
    ab[0] = 1.0
    ab[1:] = np.cumprod(ratios)
    return NoiseSchedule(K, ab)


def _check_step(k, schedule, lo):
    if not (lo <= k <= schedule.K):
        raise ValueError(f"diffusion step {k} outside [{lo}, {schedule.K}]")


def q_sample(x0, k, eps, schedule):
    """Forward corruption to step ``k`` (k = 0 returns ``x0``)."""
    _check_step(k, schedule, 0)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 {x0.shape} and noise {eps.shape} differ in shape")
    ab = schedule.alpha_bar[k]
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def q_sample_batch(x0, k, eps, schedule):
    """Vectorised :func:`q_sample` with one step index per leading row."""
    ab = schedule.alpha_bar[np.asarray(k)].reshape((-1,) + (1,) * (np.ndim(x0) - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def masked_noise_loss(eps_hat, eps, mask):
    """Mean squared error over the masked entries.

    ``mask`` marks valid timesteps and broadcasts over the trailing pose axis;
    the normaliser counts masked scalar entries.
    """
    return masked_noise_loss_grad(eps_hat, eps, mask)[0]


def masked_noise_loss_grad(eps_hat, eps, mask):
    """Loss and its gradient with respect to ``eps_hat``."""
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps_hat.shape != eps.shape:
        raise ValueError(f"prediction {eps_hat.shape} and target {eps.shape} differ in shape")
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != eps.shape:
        m = np.broadcast_to(m[..., None], eps.shape)
    count = m.sum()
    if count == 0:
        raise ValueError("mask selects no entries")
    diff = (eps_hat - eps) * m
    loss = float((diff * diff).sum() / count)
    return loss, 2.0 * diff / count


def ddim_coefficients(k, schedule, eta=0.0):
    """``(a, b, sigma)`` with ``x_{k-1} = a * x_k - b * eps_hat + sigma * z``."""
    _check_step(k, schedule, 1)
    ab = schedule.alpha_bar[k]
    ab_prev = schedule.alpha_bar[k - 1]
    sigma = eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab)) * math.sqrt(max(0.0, 1.0 - ab / ab_prev))
    a = math.sqrt(ab_prev / ab)
    b = a * math.sqrt(1.0 - ab) - math.sqrt(max(0.0, 1.0 - ab_prev - sigma * sigma))
    return a, b, sigma


def clip_noise_estimate(x_k, eps_hat, k, schedule, bound):
    """Noise estimate consistent with the clean-sample estimate clipped to
    ``[-bound, bound]``."""
    ab = schedule.alpha_bar[k]
    x0 = (x_k - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)
    x0 = np.clip(x0, -bound, bound)
    return (x_k - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)


def ddim_step(x_k, eps_hat, k, schedule, eta=0.0, noise=None, clip_denoised=None):
    """One reverse step ``x_{k-1} = a x_k - b eps_hat + sigma z``.

    ``clip_denoised`` optionally bounds the implied clean sample first; with
    the default ``None`` the step is the plain closed form.
    """
    a, b, sigma = ddim_coefficients(k, schedule, eta)
    x_k = np.asarray(x_k, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if clip_denoised is not None:
        eps_hat = clip_noise_estimate(x_k, eps_hat, k, schedule, clip_denoised)
    x_prev = a * x_k - b * eps_hat
    if sigma > 0:
        if noise is None:
            raise ValueError("eta > 0 needs a noise sample")
        x_prev = x_prev + sigma * np.asarray(noise, dtype=np.float64)
    return x_prev


def sample(denoiser, cond, shape, schedule, seed, guidance_scale=1.0, eta=0.0, x_K=None,
           clip_denoised=None):
    """Run the reverse chain from ``x_K ~ N(0, I)`` down to step 0.

    ``denoiser(x, k, cond)`` returns the noise estimate. With
    ``guidance_scale != 1`` the estimate is extrapolated away from the
    prediction under an all-zero condition. ``clip_denoised`` is passed to
    every :func:`ddim_step`.
    """
    rng = Rng(seed)
    x = rng.normal(shape) if x_K is None else np.array(x_K, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    null = np.zeros_like(cond)
    for k in range(schedule.K, 0, -1):
        eps = denoiser(x, k, cond)
        if guidance_scale != 1.0:
            eps_null = denoiser(x, k, null)
            eps = eps_null + guidance_scale * (eps - eps_null)
        noise = rng.normal(shape) if eta > 0 else None
        x = ddim_step(x, eps, k, schedule, eta, noise, clip_denoised)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"sampler produced non-finite values at step {k}")
    return x
