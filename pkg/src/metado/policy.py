"""Attention-based actor-critic over a population, with a hand-written backward pass.

Layout: two affine embeddings of the N x 10 state (population and detection
embeddings), a pre-norm self-attention encoder block over the population
embeddings, a pre-norm cross-attention decoder block whose queries are the
detection embeddings, then Gaussian heads per individual and a critic on the
mean-pooled decoder output.  There are no positional terms, so the actor is
permutation equivariant and the critic permutation invariant.

Parameters are held in float64 but always rounded to float32-representable
values, so the float32 checkpoint format round-trips bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

MU_RANGE = (0.0, 1.0)
SIGMA_MIN = 1e-3
SIGMA_MAX = 0.7
LN_EPS = 1e-5
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class StaleCacheError(RuntimeError):
    """The parameters changed after the forward pass that produced a cache."""


@dataclass(frozen=True)
class PolicyConfig:
    d_in: int = 10
    d_model: int = 128
    n_heads: int = 4
    d_ff: int = 256
    d_critic: int = 64
    n_out: int = 3

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, f, c = self.d_model, self.d_ff, self.d_critic
        out: dict[str, tuple[int, ...]] = {
            "pe.w": (self.d_in, d), "pe.b": (d,),
            "de.w": (self.d_in, d), "de.b": (d,),
        }
        out.update(_block_shapes("enc", d, f, cross=False))
        out.update(_block_shapes("dec", d, f, cross=True))
        out.update({
            "mu.w": (d, self.n_out), "mu.b": (self.n_out,),
            "sigma.w": (d, self.n_out), "sigma.b": (self.n_out,),
            "critic.l1.w": (d, c), "critic.l1.b": (c,),
            "critic.l2.w": (c, 1), "critic.l2.b": (1,),
        })
        return out


def _block_shapes(prefix: str, d: int, f: int, cross: bool) -> dict[str, tuple[int, ...]]:
    out = {}
    norms = ("lnq", "lnkv") if cross else ("ln1",)
    for ln in norms:
        out[f"{prefix}.{ln}.g"] = (d,)
        out[f"{prefix}.{ln}.b"] = (d,)
    for p in ("q", "k", "v", "o"):
        out[f"{prefix}.attn.w{p}"] = (d, d)
        out[f"{prefix}.attn.b{p}"] = (d,)
    out[f"{prefix}.ln2.g"] = (d,)
    out[f"{prefix}.ln2.b"] = (d,)
    out[f"{prefix}.ff1.w"] = (d, f)
    out[f"{prefix}.ff1.b"] = (f,)
    out[f"{prefix}.ff2.w"] = (f, d)
    out[f"{prefix}.ff2.b"] = (d,)
    return out


def _fan_in(name: str, shapes: dict) -> int:
    if name.endswith(".b"):
        return shapes[name[:-1] + "w"][0]
    if ".attn.b" in name:
        return shapes[name.replace(".attn.b", ".attn.w")][0]
    return shapes[name][0]


def _f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


class PolicyParams:
    """Named tensors of the actor and critic, in fixed declaration order."""

    def __init__(self, config: PolicyConfig, tensors: dict[str, np.ndarray]):
        shapes = config.shapes()
        if list(tensors) != list(shapes):
            raise ValueError("tensor names do not match the architecture")
        for name, shape in shapes.items():
            if tuple(tensors[name].shape) != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {tensors[name].shape}")
        self.config = config
        self.tensors = {k: _f32(v) for k, v in tensors.items()}
        self.version = 0
        self._cast: tuple[int, dict] | None = None

    def as_float32(self) -> dict[str, np.ndarray]:
        """float32 copies of the tensors (exact, since values are float32-representable)."""
        if self._cast is None or self._cast[0] != self.version:
            self._cast = (self.version, {k: v.astype(np.float32) for k, v in self.tensors.items()})
        return self._cast[1]

    @classmethod
    def init(cls, config: PolicyConfig = PolicyConfig(), rng: np.random.Generator | int | None = 0) -> "PolicyParams":
        rng = np.random.default_rng(rng)
        tensors = {}
        shapes = config.shapes()
        for name, shape in shapes.items():
            if name.endswith(".g"):
                tensors[name] = np.ones(shape)
            elif ".ln" in name:
                tensors[name] = np.zeros(shape)
            else:
                bound = 1.0 / math.sqrt(_fan_in(name, shapes))
                tensors[name] = rng.uniform(-bound, bound, size=shape)
        return cls(config, tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def assign(self, tensors: dict[str, np.ndarray]) -> None:
        for k, v in tensors.items():
            if self.tensors[k].shape != v.shape:
                raise ValueError(f"{k}: shape mismatch")
            self.tensors[k] = _f32(v)
        self.version += 1

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def equals(self, other: "PolicyParams") -> bool:
        return list(self.tensors) == list(other.tensors) and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors)


class GaussianHead(NamedTuple):
    mu: np.ndarray
    sigma: np.ndarray


# ---------------------------------------------------------------------------
# layers: each forward returns (out, cache); each backward takes the matching cache
# ---------------------------------------------------------------------------

def _linear(x, w, b):
    return x @ w + b, x


def _linear_back(dy, x, w):
    din = x.shape[-1]
    dw = x.reshape(-1, din).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dy @ w.T, dw, db


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)


def _layernorm_back(dy, cache, g):
    xhat, inv = cache
    d = xhat.shape[-1]
    dg = (dy * xhat).reshape(-1, d).sum(axis=0)
    db = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * g
    dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dx, dg, db


def _split(x, h):
    *lead, n, d = x.shape
    return x.reshape(*lead, n, h, d // h).swapaxes(-2, -3)


def _merge(x):
    x = x.swapaxes(-2, -3)
    *lead, n, h, dh = x.shape
    return x.reshape(*lead, n, h * dh)


def _attention(xq, xkv, p, prefix, h):
    q = xq @ p[prefix + ".wq"] + p[prefix + ".bq"]
    k = xkv @ p[prefix + ".wk"] + p[prefix + ".bk"]
    v = xkv @ p[prefix + ".wv"] + p[prefix + ".bv"]
    qh, kh, vh = _split(q, h), _split(k, h), _split(v, h)
    scale = 1.0 / math.sqrt(qh.shape[-1])
    s = (qh @ kh.swapaxes(-1, -2)) * scale
    s = s - s.max(axis=-1, keepdims=True)
    a = np.exp(s)
    a /= a.sum(axis=-1, keepdims=True)
    o = _merge(a @ vh)
    out = o @ p[prefix + ".wo"] + p[prefix + ".bo"]
    return out, (xq, xkv, qh, kh, vh, a, o, scale)


def _attention_back(dout, cache, p, prefix, h, grads):
    xq, xkv, qh, kh, vh, a, o, scale = cache
    do, grads[prefix + ".wo"], grads[prefix + ".bo"] = _linear_back(dout, o, p[prefix + ".wo"])
    doh = _split(do, h)
    da = doh @ vh.swapaxes(-1, -2)
    dvh = a.swapaxes(-1, -2) @ doh
    ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
    dqh = ds @ kh
    dkh = ds.swapaxes(-1, -2) @ qh
    dxq, grads[prefix + ".wq"], grads[prefix + ".bq"] = _linear_back(_merge(dqh), xq, p[prefix + ".wq"])
    dxk, grads[prefix + ".wk"], grads[prefix + ".bk"] = _linear_back(_merge(dkh), xkv, p[prefix + ".wk"])
    dxv, grads[prefix + ".wv"], grads[prefix + ".bv"] = _linear_back(_merge(dvh), xkv, p[prefix + ".wv"])
    return dxq, dxk + dxv


def _ffn(x, p, prefix):
    z = x @ p[prefix + ".ff1.w"] + p[prefix + ".ff1.b"]
    hdn = np.maximum(z, 0.0)
    return hdn @ p[prefix + ".ff2.w"] + p[prefix + ".ff2.b"], (x, z, hdn)


def _ffn_back(dy, cache, p, prefix, grads):
    x, z, hdn = cache
    dh, grads[prefix + ".ff2.w"], grads[prefix + ".ff2.b"] = _linear_back(dy, hdn, p[prefix + ".ff2.w"])
    dz = dh * (z > 0)
    dx, grads[prefix + ".ff1.w"], grads[prefix + ".ff1.b"] = _linear_back(dz, x, p[prefix + ".ff1.w"])
    return dx


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    version: int
    params_id: int
    state: np.ndarray
    parts: dict


def forward(params: PolicyParams, state: np.ndarray) -> tuple[GaussianHead, np.ndarray | float, ForwardCache]:
    """Gaussian head parameters and state value for a (..., N, 10) state batch.

    A float32 ``state`` runs the whole pass in float32; anything else in float64.
    """
    state = np.asarray(state)
    if state.dtype != np.float32:
        state = state.astype(np.float64)
    if state.ndim < 2 or state.shape[-1] != params.config.d_in or state.shape[-2] < 1:
        raise ValueError(f"state must be (..., N, {params.config.d_in}) with N >= 1")
    if not np.all(np.isfinite(state)):
        raise ValueError("state contains non-finite entries")
    p = params.as_float32() if state.dtype == np.float32 else params.tensors
    h = params.config.n_heads
    c = {}

    pe, _ = _linear(state, p["pe.w"], p["pe.b"])
    de, _ = _linear(state, p["de.w"], p["de.b"])

    a1, c["enc.ln1"] = _layernorm(pe, p["enc.ln1.g"], p["enc.ln1.b"])
    att, c["enc.attn"] = _attention(a1, a1, p, "enc.attn", h)
    x1 = pe + att
    b1, c["enc.ln2"] = _layernorm(x1, p["enc.ln2.g"], p["enc.ln2.b"])
    ff, c["enc.ff"] = _ffn(b1, p, "enc")
    fipe = x1 + ff

    q, c["dec.lnq"] = _layernorm(de, p["dec.lnq.g"], p["dec.lnq.b"])
    kv, c["dec.lnkv"] = _layernorm(fipe, p["dec.lnkv.g"], p["dec.lnkv.b"])
    att2, c["dec.attn"] = _attention(q, kv, p, "dec.attn", h)
    y1 = de + att2
    b2, c["dec.ln2"] = _layernorm(y1, p["dec.ln2.g"], p["dec.ln2.b"])
    ff2, c["dec.ff"] = _ffn(b2, p, "dec")
    dec = y1 + ff2

    tmu = np.tanh(dec @ p["mu.w"] + p["mu.b"])
    tsig = np.tanh(dec @ p["sigma.w"] + p["sigma.b"])
    mu = (tmu + 1.0) / 2.0
    sigma = np.maximum(SIGMA_MIN + (SIGMA_MAX - SIGMA_MIN) * (tsig + 1.0) / 2.0, SIGMA_MIN)

    pooled = dec.mean(axis=-2)
    hc = np.tanh(pooled @ p["critic.l1.w"] + p["critic.l1.b"])
    value = (hc @ p["critic.l2.w"] + p["critic.l2.b"])[..., 0]

    c.update(dec=dec, tmu=tmu, tsig=tsig, pooled=pooled, hc=hc)
    cache = ForwardCache(params.version, id(params), state, c)
    return GaussianHead(mu, sigma), (float(value) if value.ndim == 0 else value), cache


def backward(params: PolicyParams, cache: ForwardCache, d_mu: np.ndarray, d_sigma: np.ndarray,
             d_value) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its gradients w.r.t. mu, sigma and value."""
    if cache.params_id != id(params) or cache.version != params.version:
        raise StaleCacheError("cache was produced with different parameters")
    state = cache.state
    dt = state.dtype
    p = params.as_float32() if dt == np.float32 else params.tensors
    h = params.config.n_heads
    c = cache.parts
    g: dict[str, np.ndarray] = {}
    d_mu = np.asarray(d_mu, dtype=dt)
    d_sigma = np.asarray(d_sigma, dtype=dt)
    dec = c["dec"]
    n = dec.shape[-2]

    d_value = np.asarray(d_value, dtype=dt).reshape(c["hc"].shape[:-1] + (1,))
    dhc, g["critic.l2.w"], g["critic.l2.b"] = _linear_back(d_value, c["hc"], p["critic.l2.w"])
    dz = dhc * (1.0 - c["hc"] ** 2)
    dpooled, g["critic.l1.w"], g["critic.l1.b"] = _linear_back(dz, c["pooled"], p["critic.l1.w"])
    ddec = np.repeat(dpooled[..., None, :] / n, n, axis=-2)

    dzmu = np.asarray(d_mu) * 0.5 * (1.0 - c["tmu"] ** 2)
    dd, g["mu.w"], g["mu.b"] = _linear_back(dzmu, dec, p["mu.w"])
    ddec = ddec + dd
    dzs = np.asarray(d_sigma) * 0.5 * (SIGMA_MAX - SIGMA_MIN) * (1.0 - c["tsig"] ** 2)
    dd, g["sigma.w"], g["sigma.b"] = _linear_back(dzs, dec, p["sigma.w"])
    ddec = ddec + dd

    # decoder block
    dy1 = ddec
    db2 = _ffn_back(ddec, c["dec.ff"], p, "dec", g)
    dx, g["dec.ln2.g"], g["dec.ln2.b"] = _layernorm_back(db2, c["dec.ln2"], p["dec.ln2.g"])
    dy1 = dy1 + dx
    dde = dy1
    dq, dkv = _attention_back(dy1, c["dec.attn"], p, "dec.attn", h, g)
    dx, g["dec.lnq.g"], g["dec.lnq.b"] = _layernorm_back(dq, c["dec.lnq"], p["dec.lnq.g"])
    dde = dde + dx
    dfipe, g["dec.lnkv.g"], g["dec.lnkv.b"] = _layernorm_back(dkv, c["dec.lnkv"], p["dec.lnkv.g"])

    # encoder block
    dx1 = dfipe
    db1 = _ffn_back(dfipe, c["enc.ff"], p, "enc", g)
    dx, g["enc.ln2.g"], g["enc.ln2.b"] = _layernorm_back(db1, c["enc.ln2"], p["enc.ln2.g"])
    dx1 = dx1 + dx
    dpe = dx1
    dq, dkv = _attention_back(dx1, c["enc.attn"], p, "enc.attn", h, g)
    dx, g["enc.ln1.g"], g["enc.ln1.b"] = _layernorm_back(dq + dkv, c["enc.ln1"], p["enc.ln1.g"])
    dpe = dpe + dx

    _, g["pe.w"], g["pe.b"] = _linear_back(dpe, state, p["pe.w"])
    _, g["de.w"], g["de.b"] = _linear_back(dde, state, p["de.w"])
    return {k: g[k].astype(np.float64) for k in p}


# ---------------------------------------------------------------------------
# action distribution
# ---------------------------------------------------------------------------

def log_prob_and_entropy(head: GaussianHead, a: np.ndarray) -> tuple[float, float]:
    """Summed Normal log-density of ``a`` (unclipped) and summed entropy."""
    mu, sigma = head
    z = (a - mu) / sigma
    logp = float(np.sum(-0.5 * z * z - np.log(sigma) - LOG_SQRT_2PI))
    ent = float(np.sum(0.5 + LOG_SQRT_2PI + np.log(sigma)))
    return logp, ent


def sample(head: GaussianHead, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, float]:
    """Draw raw Normal actions; returns (clipped action, raw action, log-prob of raw)."""
    raw = head.mu + head.sigma * rng.standard_normal(head.mu.shape)
    logp, _ = log_prob_and_entropy(head, raw)
    return np.clip(raw, 0.0, 1.0), raw, logp
