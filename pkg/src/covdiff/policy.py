"""Policy networks: point-cloud encoder, history encoder, condition fusion and
the FiLM-conditioned residual MLP that predicts diffusion noise.

Parameters live in one flat ``dict[str, ndarray]`` so the optimizer and the
checkpoint writer can treat them uniformly. Forward functions return
``(output, cache)`` and the matching backward functions return gradients
keyed like the parameters.
"""

import json
import math
import struct

import numpy as np

from . import numkernel as nk

GEOM_WIDTHS = (3, 64, 128, 256)
GEOM_OUT = 64
STATE_IN = 24
STATE_HIDDEN = 128
STATE_OUT = 64
COND_DIM = GEOM_OUT + STATE_OUT
TIME_DIM = 64
HIDDEN = 256
N_BLOCKS = 4
POSE_DIM = 6
# BLAS picks different kernels for very short matrices; tiling small clouds
# up to this many rows keeps every point's features row-count independent
MIN_ROWS = 16


def _linear_params(params, rng, name, n_in, n_out):
    params[f"{name}.W"] = nk.init_uniform(rng, (n_out, n_in), n_in)
    params[f"{name}.b"] = nk.init_uniform(rng, (n_out,), n_in)


def _norm_params(params, name, d):
    params[f"{name}.gain"] = np.ones(d)
    params[f"{name}.bias"] = np.zeros(d)


def _lin(params, name, x):
    return nk.linear_forward(params[f"{name}.W"], params[f"{name}.b"], x)


def _lin_back(grads, name, cache, dy):
    dx, dW, db = nk.linear_backward(cache, dy)
    grads[f"{name}.W"] = grads.get(f"{name}.W", 0.0) + dW
    grads[f"{name}.b"] = grads.get(f"{name}.b", 0.0) + db
    return dx


def _ln(params, name, x):
    return nk.layernorm_forward(x, params[f"{name}.gain"], params[f"{name}.bias"])


def _ln_back(grads, name, cache, dy):
    dx, dg, db = nk.layernorm_backward(cache, dy)
    grads[f"{name}.gain"] = grads.get(f"{name}.gain", 0.0) + dg
    grads[f"{name}.bias"] = grads.get(f"{name}.bias", 0.0) + db
    return dx


# --------------------------------------------------------------------------
# geometry encoder


def first_argmax(h, colmax):
    """Row of the first occurrence of ``colmax[j]`` in each column ``j`` of ``h``
    (ties resolve to the lowest point index)."""
    rows, cols = np.nonzero(h == colmax)
    arg = np.full(h.shape[1], h.shape[0], dtype=np.int64)
    np.minimum.at(arg, cols, rows)
    return arg


class PointMaxEncoder:
    """Per-point (linear, ReLU, LayerNorm) x 3, max-pool over points, then a
    linear projection followed by LayerNorm.

    Any object with the same ``init_params`` / ``forward`` / ``backward``
    signature can stand in as the geometry encoder.
    """

    prefix = "geo"
    out_dim = GEOM_OUT

    def __init__(self, widths=GEOM_WIDTHS, out_dim=GEOM_OUT):
        self.widths = tuple(widths)
        self.out_dim = out_dim

    def init_params(self, params, rng):
        for i, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            _linear_params(params, rng, f"{self.prefix}.mlp{i}", a, b)
            _norm_params(params, f"{self.prefix}.mlp{i}.ln", b)
        _linear_params(params, rng, f"{self.prefix}.proj", self.widths[-1], self.out_dim)
        _norm_params(params, f"{self.prefix}.proj.ln", self.out_dim)

    def forward(self, params, points):
        P = np.asarray(points, dtype=np.float64)
        if P.ndim != 2 or P.shape[1] != 3:
            raise ValueError(f"point cloud must be (N, 3), got {P.shape}")
        if len(P) == 0:
            raise ValueError("point cloud is empty")
        if len(P) < MIN_ROWS:
            # duplicates leave the max unchanged and lose every tie
            P = np.tile(P, (-(-MIN_ROWS // len(P)), 1))
        h = P
        layers = []
        for i in range(len(self.widths) - 1):
            name = f"{self.prefix}.mlp{i}"
            z, lc = _lin(params, name, h)
            a, rc = nk.relu_forward(z)
            h, nc = _ln(params, f"{name}.ln", a)
            layers.append((lc, rc, nc))
        pooled = h.max(axis=0)
        arg = first_argmax(h, pooled)
        z, pc = _lin(params, f"{self.prefix}.proj", pooled[None, :])
        g, pnc = _ln(params, f"{self.prefix}.proj.ln", z)
        return g[0], (layers, arg, pc, pnc)

    def backward(self, params, cache, dg, grads):
        layers, arg, pc, pnc = cache
        dz = _ln_back(grads, f"{self.prefix}.proj.ln", pnc, np.asarray(dg).reshape(1, -1))
        dpooled = _lin_back(grads, f"{self.prefix}.proj", pc, dz)[0]
        # only argmax points receive gradient; backprop through those rows alone
        rows, inverse = np.unique(arg, return_inverse=True)
        dh = np.zeros((len(rows), len(arg)))
        dh[inverse, np.arange(len(arg))] = dpooled
        for i in reversed(range(len(layers))):
            name = f"{self.prefix}.mlp{i}"
            (W, x), relu_out, (xhat, inv_std, gain) = layers[i]
            da = _ln_back(grads, f"{name}.ln", (xhat[rows], inv_std[rows], gain), dh)
            dz = nk.relu_backward(relu_out[rows], da)
            dh = _lin_back(grads, name, (W, x[rows]), dz)
        return grads


# --------------------------------------------------------------------------
# state encoder, fusion, FiLM


def encode_state_forward(params, h):
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != STATE_IN:
        raise ValueError(f"history vector must have length {STATE_IN}, got {h.shape[-1]}")
    x = h.reshape(-1, STATE_IN)
    z, c0 = _lin(params, "state.l0", x)
    a, rc = nk.relu_forward(z)
    s, c1 = _lin(params, "state.l1", a)
    return s, (c0, rc, c1)


def encode_state_backward(cache, ds, grads):
    c0, rc, c1 = cache
    da = _lin_back(grads, "state.l1", c1, ds)
    dz = nk.relu_backward(rc, da)
    _lin_back(grads, "state.l0", c0, dz)
    return grads


def encode_state(params, h):
    s, _ = encode_state_forward(params, h)
    return s[0] if np.ndim(h) == 1 else s


def fuse_condition(g, s):
    g = np.asarray(g, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if g.shape[-1] != GEOM_OUT or s.shape[-1] != STATE_OUT:
        raise ValueError(f"expected {GEOM_OUT} + {STATE_OUT} features, got {g.shape[-1]} + {s.shape[-1]}")
    if g.ndim < s.ndim:
        g = np.broadcast_to(g, s.shape[:-1] + (GEOM_OUT,))
    elif s.ndim < g.ndim:
        s = np.broadcast_to(s, g.shape[:-1] + (STATE_OUT,))
    return np.concatenate([g, s], axis=-1)


def film(x, gamma, beta):
    x, gamma, beta = (np.asarray(v, dtype=np.float64) for v in (x, gamma, beta))
    if not (x.shape == gamma.shape == beta.shape):
        raise ValueError(f"FiLM operands differ in shape: {x.shape}, {gamma.shape}, {beta.shape}")
    return gamma * x + beta


def timestep_embedding(k, dim=TIME_DIM):
    """Sinusoidal embedding ``[sin(k w_i), cos(k w_i)]`` with
    ``w_i = 10000^(-i / (dim/2))``."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = np.asarray(k, dtype=np.float64).reshape(-1, 1) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


# --------------------------------------------------------------------------
# denoiser


def denoise_forward(params, x_k, k, cond, horizon):
    x = np.asarray(x_k, dtype=np.float64)
    if x.shape[-2:] != (horizon, POSE_DIM):
        raise ValueError(f"expected trajectory of shape (..., {horizon}, {POSE_DIM}), got {x.shape}")
    B = int(np.prod(x.shape[:-2]))
    cond = np.asarray(cond, dtype=np.float64).reshape(-1, COND_DIM)
    if len(cond) == 1 and B > 1:
        cond = np.repeat(cond, B, axis=0)
    if len(cond) != B:
        raise ValueError(f"{len(cond)} conditions for a batch of {B}")
    ks = np.broadcast_to(np.asarray(k), (B,))
    cf = np.concatenate([cond, timestep_embedding(ks)], axis=1)
    h, in_c = _lin(params, "den.in", x.reshape(B, -1))
    blocks = []
    for r in range(N_BLOCKS):
        gb, fc = _lin(params, f"den.b{r}.film", cf)
        gamma, beta = gb[:, :HIDDEN], gb[:, HIDDEN:]
        a, l1c = _lin(params, f"den.b{r}.l1", h)
        f = film(a, gamma, beta)
        u, rc = nk.relu_forward(f)
        o, l2c = _lin(params, f"den.b{r}.l2", u)
        h = h + o
        blocks.append((fc, gamma, a, l1c, rc, l2c))
    out, oc = _lin(params, "den.out", h)
    return out.reshape(x.shape), (x.shape, in_c, blocks, oc)


def denoise_backward(cache, d_eps, grads):
    """Accumulate denoiser gradients into ``grads``; returns d(condition)."""
    shape, in_c, blocks, oc = cache
    dy = np.asarray(d_eps, dtype=np.float64).reshape(shape[0] if len(shape) == 3 else 1, -1)
    dh = _lin_back(grads, "den.out", oc, dy)
    dcf = 0.0
    for r in reversed(range(N_BLOCKS)):
        fc, gamma, a, l1c, rc, l2c = blocks[r]
        du = _lin_back(grads, f"den.b{r}.l2", l2c, dh)
        df = nk.relu_backward(rc, du)
        dgb = np.concatenate([df * a, df], axis=1)
        dcf = dcf + _lin_back(grads, f"den.b{r}.film", fc, dgb)
        dh = dh + _lin_back(grads, f"den.b{r}.l1", l1c, df * gamma)
    _lin_back(grads, "den.in", in_c, dh)
    return dcf[:, :COND_DIM]


# --------------------------------------------------------------------------
# whole policy


class Policy:
    """Parameter container plus the composite forward/backward used in training.

    ``variant`` selects how the history enters the condition:
    ``"previous"`` encodes the real history, ``"zero"`` always encodes a zero
    history and ``"none"`` drops the state features (zeros in their slots).
    """

    VARIANTS = ("previous", "zero", "none")

    def __init__(self, horizon=16, seed=0, variant="previous", encoder=None, params=None):
        if variant not in self.VARIANTS:
            raise ValueError(f"unknown conditioning variant {variant!r}")
        self.horizon = int(horizon)
        self.variant = variant
        self.encoder = encoder or PointMaxEncoder()
        if params is None:
            rng = nk.Rng(seed)
            params = {}
            self.encoder.init_params(params, rng)
            _linear_params(params, rng, "state.l0", STATE_IN, STATE_HIDDEN)
            _linear_params(params, rng, "state.l1", STATE_HIDDEN, STATE_OUT)
            d = self.horizon * POSE_DIM
            _linear_params(params, rng, "den.in", d, HIDDEN)
            for r in range(N_BLOCKS):
                _linear_params(params, rng, f"den.b{r}.film", COND_DIM + TIME_DIM, 2 * HIDDEN)
                _linear_params(params, rng, f"den.b{r}.l1", HIDDEN, HIDDEN)
                _linear_params(params, rng, f"den.b{r}.l2", HIDDEN, HIDDEN)
            _linear_params(params, rng, "den.out", HIDDEN, d)
        self.params = params

    # -- pieces ---------------------------------------------------------
    def encode_geometry(self, points):
        return self.encoder.forward(self.params, points)[0]

    def encode_state(self, history_vec):
        return encode_state(self.params, history_vec)

    def condition(self, points=None, history_vec=None, geometry=None):
        g = self.encode_geometry(points) if geometry is None else geometry
        if self.variant == "none":
            s = np.zeros(STATE_OUT)
        else:
            h = np.zeros(STATE_IN) if self.variant == "zero" else np.asarray(history_vec, dtype=np.float64)
            s = self.encode_state(h)
        return fuse_condition(g, s)

    def denoise(self, x_k, k, cond):
        return denoise_forward(self.params, x_k, k, cond, self.horizon)[0]

    # -- training composite --------------------------------------------
    def loss_and_grads(self, clouds, obj_index, history, x_k, k, eps, mask, drop=None):
        """Masked noise loss of a batch and gradients for every parameter.

        ``clouds`` is a list of ``(N_i, 3)`` arrays; row ``b`` of the batch uses
        ``clouds[obj_index[b]]``. ``drop`` optionally flags rows whose whole
        condition vector is zeroed (condition dropout).
        """
        B = len(x_k)
        obj_index = np.asarray(obj_index)
        used = np.unique(obj_index)
        geo = {}
        for o in used:
            geo[o] = self.encoder.forward(self.params, clouds[o])
        g = np.stack([geo[o][0] for o in obj_index])
        if self.variant == "none":
            s = np.zeros((B, STATE_OUT))
            s_cache = None
        else:
            hv = np.asarray(history, dtype=np.float64).reshape(B, STATE_IN)
            if self.variant == "zero":
                hv = np.zeros_like(hv)
            s, s_cache = encode_state_forward(self.params, hv)
        cond = fuse_condition(g, s)
        keep = np.ones((B, 1)) if drop is None else (1.0 - np.asarray(drop, dtype=np.float64)).reshape(B, 1)
        cond = cond * keep
        from .diffusion import masked_noise_loss_grad

        eps_hat, dcache = denoise_forward(self.params, x_k, k, cond, self.horizon)
        loss, d_eps = masked_noise_loss_grad(eps_hat, eps, mask)
        grads = {}
        dcond = denoise_backward(dcache, d_eps, grads) * keep
        if s_cache is not None:
            encode_state_backward(s_cache, dcond[:, GEOM_OUT:], grads)
        dg = dcond[:, :GEOM_OUT]
        for o in used:
            self.encoder.backward(self.params, geo[o][1], dg[obj_index == o].sum(axis=0), grads)
        for name, p in self.params.items():
            if name not in grads:
                grads[name] = np.zeros_like(p)
        return loss, grads

    def config(self):
        return {"horizon": self.horizon, "variant": self.variant, "encoder": "point-max"}


# --------------------------------------------------------------------------
# checkpoint file
#
# little-endian layout:
#   b"3DCD" | u8 version | u32 meta_len | meta (UTF-8 JSON) | u32 n_entries |
#   n_entries x (u16 name_len | name | u8 ndim | ndim x u32 dims | u64 offset) |
#   payload of float64 values; offsets count bytes from the payload start

MAGIC = b"3DCD"
FORMAT_VERSION = 1


def save_checkpoint(path, policy, extra=None):
    meta = dict(policy.config())
    meta.update(extra or {})
    meta_b = json.dumps(meta, sort_keys=True).encode("utf-8")
    names = sorted(policy.params)
    head = [MAGIC, struct.pack("<B", FORMAT_VERSION), struct.pack("<I", len(meta_b)), meta_b,
            struct.pack("<I", len(names))]
    payload = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(policy.params[name], dtype="<f8")
        nb = name.encode("utf-8")
        head.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        head.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        head.append(struct.pack("<Q", offset))
        payload.append(arr.tobytes())
        offset += arr.nbytes
    with open(path, "wb") as fh:
        fh.write(b"".join(head))
        fh.write(b"".join(payload))


def load_checkpoint(path):
    """Returns ``(policy, meta)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version = data[4]
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 5
    (meta_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    entries = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + ln].decode("utf-8")
        pos += ln
        ndim = data[pos]
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        (off,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        entries.append((name, shape, off))
    params = {}
    for name, shape, off in entries:
        count = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos + off).reshape(shape).astype(np.float64)
    policy = Policy(horizon=meta["horizon"], variant=meta["variant"], params=params)
    return policy, meta
