"""Attention encoder over per-anchor tokens, with exact reverse-mode gradients.

Every tensor is float64. The layout is post-norm: each encoder layer computes
``h = LN(h + MHA(h))`` and then ``h = LN(h + FF(h))``. Tokens carry no positional
encoding, so the network is invariant to the order of anchors.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

LN_EPS = 1e-5
PROB_CLAMP = 1e-7
_GELU_C = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True)
class NetConfig:
    d_in: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    n_layers: int = 3

    def __post_init__(self):
        for name, v in asdict(self).items():
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    def layout(self) -> list:
        """Ordered ``(name, shape)`` pairs of every parameter tensor."""
        D, F = self.d_model, self.d_ff
        out = [("embed.w", (self.d_in, D)), ("embed.b", (D,))]
        for i in range(self.n_layers):
            p = f"layer{i}."
            out += [(p + "wq", (D, D)), (p + "bq", (D,)), (p + "wk", (D, D)), (p + "bk", (D,)),
                    (p + "wv", (D, D)), (p + "bv", (D,)), (p + "wo", (D, D)), (p + "bo", (D,)),
                    (p + "ln1.g", (D,)), (p + "ln1.b", (D,)),
                    (p + "w1", (D, F)), (p + "b1", (F,)), (p + "w2", (F, D)), (p + "b2", (D,)),
                    (p + "ln2.g", (D,)), (p + "ln2.b", (D,))]
        out += [("head.w", (D,)), ("head.b", (1,))]
        return out

    def n_params(self) -> int:
        return int(sum(np.prod(s) for _, s in self.layout()))


class AttentionNetParams:
    """Flat parameter vector plus named views into it."""

    def __init__(self, config: NetConfig, flat: np.ndarray | None = None):
        self.config = config
        n = config.n_params()
        self.flat = np.zeros(n) if flat is None else np.array(flat, dtype=np.float64).reshape(-1)
        if self.flat.size != n:
            raise ValueError(f"config needs {n} parameters, got {self.flat.size}")
        if not np.all(np.isfinite(self.flat)):
            raise ValueError("parameters must be finite")
        self.tensors = _views(config, self.flat)

    @classmethod
    def init(cls, config: NetConfig, seed: int) -> "AttentionNetParams":
        """Linear weights uniform in ``+-1/sqrt(fan_in)``; norm gains 1; biases 0."""
        rng = np.random.Generator(np.random.PCG64(seed))
        p = cls(config)
        for name, shape in config.layout():
            t = p.tensors[name]
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "g":
                t[...] = 1.0
            elif leaf.startswith("w"):
                bound = 1.0 / np.sqrt(shape[0])
                t[...] = rng.uniform(-bound, bound, size=shape)
        return p

    def copy(self) -> "AttentionNetParams":
        return AttentionNetParams(self.config, self.flat.copy())

    def __len__(self) -> int:
        return self.flat.size


def _views(config: NetConfig, flat: np.ndarray) -> dict:
    out, o = {}, 0
    for name, shape in config.layout():
        n = int(np.prod(shape))
        out[name] = flat[o:o + n].reshape(shape)
        o += n
    return out


# ---------------------------------------------------------------------------
# building blocks (forward returns a cache; backward consumes it)


def _gelu(x):
    u = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    du = _GELU_C * (1.0 + 3 * 0.044715 * (x * x))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def _ln(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xh = xc * inv
    return xh * g + b, (xh, inv)


def _ln_back(dy, g, cache):
    xh, inv = cache
    dg = (dy * xh).reshape(-1, dy.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dxh = dy * g
    dx = inv * (dxh - dxh.mean(axis=-1, keepdims=True) - xh * (dxh * xh).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _lin(x, w, b):
    # 2D matmul is much faster than the batched 3D form
    return (x.reshape(-1, x.shape[-1]) @ w + b).reshape(x.shape[:-1] + (w.shape[-1],))


def _lin_back(dy, x, w):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return (dy2 @ w.T).reshape(x.shape), x2.T @ dy2, dy2.sum(axis=0)


def _split(x, h):
    B, T, D = x.shape
    return x.reshape(B, T, h, D // h).transpose(0, 2, 1, 3)


def _merge(x):
    B, h, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, h * dh)


def _softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _layer_forward(x, P, p, h):
    q = _split(_lin(x, P[p + "wq"], P[p + "bq"]), h)
    k = _split(_lin(x, P[p + "wk"], P[p + "bk"]), h)
    v = _split(_lin(x, P[p + "wv"], P[p + "bv"]), h)
    scale = 1.0 / np.sqrt(q.shape[-1])
    att = _softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
    o = _merge(att @ v)
    a = _lin(o, P[p + "wo"], P[p + "bo"])
    h1, ln1 = _ln(x + a, P[p + "ln1.g"], P[p + "ln1.b"])
    z = _lin(h1, P[p + "w1"], P[p + "b1"])
    f, t = _gelu(z)
    y = _lin(f, P[p + "w2"], P[p + "b2"])
    h2, ln2 = _ln(h1 + y, P[p + "ln2.g"], P[p + "ln2.b"])
    return h2, (x, q, k, v, att, o, h1, ln1, z, f, t, ln2, scale)


def _layer_backward(dh2, P, G, p, h, cache):
    x, q, k, v, att, o, h1, ln1, z, f, t, ln2, scale = cache
    dr2, G[p + "ln2.g"][...], G[p + "ln2.b"][...] = _ln_back(dh2, P[p + "ln2.g"], ln2)
    df, G[p + "w2"][...], G[p + "b2"][...] = _lin_back(dr2, f, P[p + "w2"])
    dz = df * _gelu_grad(z, t)
    dh1, G[p + "w1"][...], G[p + "b1"][...] = _lin_back(dz, h1, P[p + "w1"])
    dh1 = dh1 + dr2
    dr1, G[p + "ln1.g"][...], G[p + "ln1.b"][...] = _ln_back(dh1, P[p + "ln1.g"], ln1)
    do, G[p + "wo"][...], G[p + "bo"][...] = _lin_back(dr1, o, P[p + "wo"])
    do = _split(do, h)
    datt = do @ v.transpose(0, 1, 3, 2)
    dv = att.transpose(0, 1, 3, 2) @ do
    ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dx = dr1.copy()
    for name, d in (("q", dq), ("k", dk), ("v", dv)):
        dxi, G[p + "w" + name][...], G[p + "b" + name][...] = _lin_back(_merge(d), x, P[p + "w" + name])
        dx += dxi
    return dx


def _check_mask(m: int, active_mask):
    if active_mask is None:
        return None
    idx = np.asarray(active_mask)
    if idx.dtype == bool:
        if idx.shape != (m,):
            raise ValueError(f"boolean mask needs length {m}")
        idx = np.flatnonzero(idx)
    idx = np.unique(idx.astype(np.int64))
    if idx.size == 0:
        raise ValueError("active mask is empty")
    if idx[0] < 0 or idx[-1] >= m:
        raise ValueError(f"mask entries must lie in [0, {m})")
    return idx


def _forward(params: AttentionNetParams, features, active_mask):
    cfg = params.config
    F = np.asarray(features, dtype=np.float64)
    if F.ndim == 2:
        F = F[None]
    if F.ndim != 3 or F.shape[-1] != cfg.d_in:
        raise ValueError(f"features must be (n, m, {cfg.d_in})")
    idx = _check_mask(F.shape[1], active_mask)
    if idx is not None:
        F = F[:, idx]
    P = params.tensors
    x = _lin(F, P["embed.w"], P["embed.b"])
    caches = []
    for i in range(cfg.n_layers):
        x, c = _layer_forward(x, P, f"layer{i}.", cfg.n_heads)
        caches.append(c)
    pooled = x.mean(axis=1)
    logit = pooled @ P["head.w"] + P["head.b"][0]
    return logit, (F, caches, pooled, x.shape[1])


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def forward(params: AttentionNetParams, features, active_mask=None) -> np.ndarray:
    """Occupancy probability per query.

    ``features`` is ``(n, m, 4)`` (or ``(m, 4)`` for one query). ``active_mask``
    selects the anchors whose tokens take part; the others are removed before
    attention, not zeroed.
    """
    logit, _ = _forward(params, features, active_mask)
    return _sigmoid(logit)


def bce(p, y) -> np.ndarray:
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))


def loss_and_gradients(params: AttentionNetParams, features, labels, active_mask=None):
    """Mean binary cross-entropy over the batch and its gradient as a flat vector."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ValueError("batch is empty")
    cfg = params.config
    logit, (F, caches, pooled, T) = _forward(params, features, active_mask)
    if logit.shape[0] != y.size:
        raise ValueError("features and labels disagree on batch size")
    p = _sigmoid(logit)
    loss = float(bce(p, y).mean())

    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = np.where(inside, (-y / p + (1.0 - y) / (1.0 - p)), 0.0)
    dlogit = dp * p * (1.0 - p) / y.size

    grad = np.zeros_like(params.flat)
    G, P = _views(cfg, grad), params.tensors
    G["head.w"][...] = pooled.T @ dlogit
    G["head.b"][0] = dlogit.sum()
    dx = np.broadcast_to((dlogit[:, None] * P["head.w"][None, :])[:, None, :] / T,
                         (y.size, T, cfg.d_model)).copy()
    for i in reversed(range(cfg.n_layers)):
        dx = _layer_backward(dx, P, G, f"layer{i}.", cfg.n_heads, caches[i])
    _, G["embed.w"][...], G["embed.b"][...] = _lin_back(dx, F, P["embed.w"])
    return loss, grad
