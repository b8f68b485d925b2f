"""Dense float64 building blocks: layers with explicit backward passes, Adam,
a seeded generator and a finite-difference gradient checker.

Matrices are plain 2-D ``float64`` numpy arrays, one row per sample.
Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
consumes that cache.
"""

import math

import numpy as np

LAYERNORM_EPS = 1e-5


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up where only finite values are allowed."""


# --------------------------------------------------------------------------
# layers


def linear_forward(W, b, x):
    """y = x @ W.T + b, with W of shape (out, in) and x of shape (batch, in)."""
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or x.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"linear: weight {W.shape} incompatible with input {x.shape}")
    if b.shape != (W.shape[0],):
        raise ShapeError(f"linear: weight {W.shape} incompatible with bias {b.shape}")
    y = x @ W.T + b
    return y, (W, x)


def linear_backward(cache, dy):
    """Returns (dx, dW, db)."""
    W, x = cache
    dy = np.asarray(dy, dtype=np.float64)
    if dy.shape != (x.shape[0], W.shape[0]):
        raise ShapeError(f"linear backward: upstream {dy.shape} vs output {(x.shape[0], W.shape[0])}")
    return dy @ W, dy.T @ x, dy.sum(axis=0)


def relu_forward(x):
    y = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    # the output doubles as the cache: y > 0 exactly where x > 0
    return y, y


def relu_backward(cache, dy):
    # subgradient at exactly 0 is 0
    return np.where(cache > 0, dy, 0.0)


def layernorm_forward(x, gain, bias, eps=LAYERNORM_EPS):
    """Normalize over the last axis (biased 1/d variance), then scale and shift."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if d < 2:
        raise ShapeError(f"layernorm needs at least 2 features, got {d}")
    if np.shape(gain) != (d,) or np.shape(bias) != (d,):
        raise ShapeError(f"layernorm: input {x.shape}, gain {np.shape(gain)}, bias {np.shape(bias)}")
    xhat = x - x.mean(axis=-1, keepdims=True)
    var = np.einsum("...i,...i->...", xhat, xhat)[..., None] / d
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat *= inv_std
    y = xhat * gain
    y += bias
    return y, (xhat, inv_std, np.asarray(gain, dtype=np.float64))


def layernorm_backward(cache, dy):
    """Returns (dx, dgain, dbias); parameter grads are summed over leading axes."""
    xhat, inv_std, gain = cache
    dy = np.asarray(dy, dtype=np.float64)
    d = xhat.shape[-1]
    lead = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=lead)
    dbias = dy.sum(axis=lead)
    dxhat = dy * gain
    dx = (inv_std / d) * (
        d * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


# --------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment buffers keyed like the parameter dict."""

    def __init__(self, params):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update of ``params`` (in place); returns ``params``.

    Gradients are validated before anything is touched, so a bad entry leaves
    both parameters and state unchanged.
    """
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != params[name].shape:
            raise ShapeError(f"{name}: gradient {np.shape(g)} vs parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")

    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params


# --------------------------------------------------------------------------
# randomness


class Rng:
    """Seeded stream built on numpy's PCG64 bit generator.

    Uniform doubles are formed from the raw 64-bit outputs as
    ``(u >> 11) * 2**-53`` and Gaussians use the Box-Muller transform, so the
    stream depends only on PCG64's documented output sequence, not on the
    version-dependent ``Generator`` sampling methods.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._bits = np.random.PCG64(self.seed)

    def uniform(self, size=None, low=0.0, high=1.0):
        n = 1 if size is None else int(np.prod(size))
        raw = self._bits.random_raw(n)
        u = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[:pairs]  # (0, 1], keeps log finite
        u2 = u[pairs:]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        z = z[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, low, high, size=None):
        """Uniform integers in [low, high)."""
        span = high - low
        if span <= 0:
            raise ValueError(f"empty integer range [{low}, {high})")
        u = self.uniform(size)
        k = np.minimum(np.floor(np.asarray(u) * span).astype(np.int64), span - 1) + low
        return int(k) if size is None else k

    def permutation(self, n):
        # Fisher-Yates driven by one batch of uniforms
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniform(n - 1)
        for i in range(n - 1, 0, -1):
            j = min(int(u[n - 1 - i] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def init_uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(shape, -bound, bound)


# --------------------------------------------------------------------------
# verification


def grad_check(f, x, analytic, probe_eps=1e-5, indices=None):
    """Largest relative error between ``analytic`` and central differences of ``f``.

    ``f`` maps a float array shaped like ``x`` to a scalar. The error at a
    coordinate is ``|a - n| / max(1e-8, |a| + |n|)``. ``indices`` restricts
    the probe to a subset of flat coordinates.
    """
    x = np.array(x, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    flat = x.ravel()
    if indices is None:
        indices = range(flat.size)
    worst = 0.0
    for i in indices:
        orig = flat[i]
        flat[i] = orig + probe_eps
        fp = f(x)
        flat[i] = orig - probe_eps
        fm = f(x)
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * probe_eps)
        a = analytic[i]
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    return worst
