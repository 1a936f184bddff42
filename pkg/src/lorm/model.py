"""Transformer backbone: embedding, encoding, pooling, and token-score heads.

The network maps an MCPS (see :mod:`lorm.sequence`) to one probability
distribution over K tokens per channel:

    E = P @ W_E                      patch embedding
    E~ = E + P_pos                   learnable absolute positions
    Z = blocks(E~)                   L pre-norm Transformer blocks + final norm
    g = mean of Z rows               global context vector
    u = layernorm(gelu(g))           head features
    v = u @ W_c                      K*C scores, C blocks of K
    pi_c = softmax(v block c)

Parameters live in a flat name -> array mapping with a canonical order
(embed, pos, per-layer attention, per-layer ffn, norms, head) used both for
deterministic initialisation and for checkpoint serialisation. Attention and
feed-forward tensors form the frozen set during fine-tuning; embeddings,
norms, and the head stay trainable.

Parameters are immutable during inference, so concurrent forward passes over
shared parameters are safe; training mutates them and must be exclusive.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.special import erf

from .sequence import PatchSequence
from .signal_io import ChannelStats

__all__ = [
    "BackboneConfig",
    "ModelParameters",
    "ParameterPartition",
    "TokenDistributions",
    "ForwardTrace",
    "Checkpoint",
    "CheckpointError",
    "param_shapes",
    "init_model",
    "gelu",
    "gelu_grad",
    "embed_and_position",
    "encode_context",
    "pool_and_predict",
    "forward_trace",
    "forward_batch",
    "backward_from_scores",
    "partition_parameters",
    "save_checkpoint",
    "load_checkpoint",
]

LN_EPS = 1e-5
INIT_STD = 0.02
CHECKPOINT_MAGIC = b"LORM"
CHECKPOINT_VERSION = 1


@dataclass
class BackboneConfig:
    """Architecture hyperparameters; max_seq_len = N*C is fixed at build time."""

    hidden_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 256
    max_seq_len: int = 60
    attention_mode: str = "causal"
    num_tokens: int = 10
    num_channels: int = 3
    patch_len: int = 16

    def __post_init__(self) -> None:
        if self.hidden_dim < self.num_heads or self.hidden_dim % self.num_heads != 0:
            raise ValueError("hidden_dim must be a positive multiple of num_heads")
        if self.attention_mode not in ("causal", "bidirectional"):
            raise ValueError(f"unknown attention_mode: {self.attention_mode!r}")
        for name in ("num_layers", "ffn_dim", "max_seq_len", "num_tokens", "num_channels", "patch_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_dict(self) -> dict:
        return {
            "hidden_dim": self.hidden_dim,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "ffn_dim": self.ffn_dim,
            "max_seq_len": self.max_seq_len,
            "attention_mode": self.attention_mode,
            "num_tokens": self.num_tokens,
            "num_channels": self.num_channels,
            "patch_len": self.patch_len,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BackboneConfig":
        return cls(**doc)


def param_shapes(cfg: BackboneConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list: embed, pos, attention, ffn, norms, head."""
    d, f, t = cfg.hidden_dim, cfg.ffn_dim, cfg.max_seq_len
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("embed.w_e", (cfg.patch_len, d)),
        ("pos.p_pos", (t, d)),
    ]
    for l in range(cfg.num_layers):
        shapes += [
            (f"layers.{l}.attn.w_q", (d, d)),
            (f"layers.{l}.attn.b_q", (d,)),
            (f"layers.{l}.attn.w_k", (d, d)),
            (f"layers.{l}.attn.b_k", (d,)),
            (f"layers.{l}.attn.w_v", (d, d)),
            (f"layers.{l}.attn.b_v", (d,)),
            (f"layers.{l}.attn.w_o", (d, d)),
            (f"layers.{l}.attn.b_o", (d,)),
        ]
    for l in range(cfg.num_layers):
        shapes += [
            (f"layers.{l}.ffn.w1", (d, f)),
            (f"layers.{l}.ffn.b1", (f,)),
            (f"layers.{l}.ffn.w2", (f, d)),
            (f"layers.{l}.ffn.b2", (d,)),
        ]
    for l in range(cfg.num_layers):
        shapes += [
            (f"layers.{l}.ln1.gain", (d,)),
            (f"layers.{l}.ln1.bias", (d,)),
            (f"layers.{l}.ln2.gain", (d,)),
            (f"layers.{l}.ln2.bias", (d,)),
        ]
    shapes += [
        ("final_ln.gain", (d,)),
        ("final_ln.bias", (d,)),
        ("head_ln.gain", (d,)),
        ("head_ln.bias", (d,)),
        ("head.w_c", (d, cfg.num_tokens * cfg.num_channels)),
    ]
    return shapes


@dataclass
class ModelParameters:
    """All weights, keyed by canonical name in canonical order."""

    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self.tensors:
            raise KeyError(name)
        self.tensors[name] = np.asarray(value, dtype=self.dtype).reshape(self.tensors[name].shape)

    def names(self) -> list[str]:
        return list(self.tensors.keys())

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    @property
    def total_size(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def copy(self) -> "ModelParameters":
        return ModelParameters({k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParameters":
        return ModelParameters({k: v.astype(dtype) for k, v in self.tensors.items()})


@dataclass
class ParameterPartition:
    """Disjoint trainable/frozen name sets covering every parameter."""

    trainable: frozenset[str]
    frozen: frozenset[str]

    def __post_init__(self) -> None:
        if self.trainable & self.frozen:
            raise ValueError("trainable and frozen sets overlap")


@dataclass
class TokenDistributions:
    """C probability vectors of length K, one per channel."""

    per_channel: np.ndarray  # (C, K)

    def __post_init__(self) -> None:
        self.per_channel = np.asarray(self.per_channel, dtype=np.float64)
        if self.per_channel.ndim != 2:
            raise ValueError("per_channel must be (C, K)")
        if np.any(self.per_channel < 0):
            raise ValueError("probabilities must be non-negative")
        sums = self.per_channel.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise ValueError("each channel distribution must sum to 1")

    @property
    def num_channels(self) -> int:
        return self.per_channel.shape[0]

    @property
    def num_tokens(self) -> int:
        return self.per_channel.shape[1]


@dataclass
class ForwardTrace:
    """Every named intermediate of one window's forward pass."""

    E: np.ndarray
    E_tilde: np.ndarray
    Z: np.ndarray
    g: np.ndarray
    u: np.ndarray
    v: np.ndarray
    distributions: TokenDistributions


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """normal(0, std) with resampling outside +-2 std."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2.0 * std
    while np.any(bad):
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2.0 * std
    return x


def init_model(cfg: BackboneConfig, seed: int, dtype=np.float32) -> ModelParameters:
    """Deterministic initialisation: matrices ~ truncated normal(0, 0.02),
    all biases 0, layer-norm gains 1."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg):
        if name.endswith(".gain"):
            value = np.ones(shape)
        elif len(shape) == 1:  # every bias vector
            value = np.zeros(shape)
        else:
            value = _truncated_normal(rng, shape, INIT_STD)
        tensors[name] = np.ascontiguousarray(value, dtype=dtype)
    return ModelParameters(tensors)


def partition_parameters(params: ModelParameters) -> ParameterPartition:
    """Frozen: attention and feed-forward tensors. Trainable: everything else
    (patch embedding, positions, every layer norm, and the head)."""
    frozen = frozenset(n for n in params.names() if ".attn." in n or ".ffn." in n)
    trainable = frozenset(params.names()) - frozen
    return ParameterPartition(trainable=trainable, frozen=frozen)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact Gaussian-CDF GELU (not the tanh approximation)."""
    return 0.5 * x * (1.0 + erf(x / np.sqrt(x.dtype.type(2.0))))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """d gelu / dx = Phi(x) + x * phi(x)."""
    dt = x.dtype.type
    phi = np.exp(-0.5 * x * x) / np.sqrt(dt(2.0) * dt(np.pi))
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(dt(2.0))))
    return cdf + x * phi


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    """LayerNorm over the last axis; returns (y, xhat, inv_std) for backward."""
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(LN_EPS))
    xhat = (x - mu) * inv_std
    return gain * xhat + bias, xhat, inv_std


def _layer_norm_backward(dy, xhat, inv_std, gain):
    dgain = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    dbias = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gain
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dgain, dbias


def _softmax_last(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, num_heads, d // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, nh, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, nh * dh)


def forward_batch(
    p_batch: np.ndarray,
    params: ModelParameters,
    cfg: BackboneConfig,
    want_cache: bool = False,
):
    """Run the full network on a (B, NC, h) batch of patch sequences.

    Returns (distributions (B, C, K) float64, cache); the cache holds every
    intermediate needed by :func:`backward_from_scores` and is None unless
    requested.
    """
    dtype = params.dtype.type
    x_in = np.ascontiguousarray(p_batch, dtype=dtype)
    if x_in.ndim != 3 or x_in.shape[1] != cfg.max_seq_len or x_in.shape[2] != cfg.patch_len:
        raise ValueError("window shape differs from training configuration")
    b, t, _ = x_in.shape
    nh, dh = cfg.num_heads, cfg.head_dim
    scale = dtype(1.0 / np.sqrt(dh))

    e = x_in @ params["embed.w_e"]
    x = e + params["pos.p_pos"]
    e_tilde = x

    causal = cfg.attention_mode == "causal"
    if causal:
        neg_mask = np.triu(np.ones((t, t), dtype=bool), k=1)

    layers_cache = []
    for l in range(cfg.num_layers):
        pre = f"layers.{l}"
        a_in, xhat1, inv1 = _layer_norm(x, params[f"{pre}.ln1.gain"], params[f"{pre}.ln1.bias"])
        q = _split_heads(a_in @ params[f"{pre}.attn.w_q"] + params[f"{pre}.attn.b_q"], nh)
        k = _split_heads(a_in @ params[f"{pre}.attn.w_k"] + params[f"{pre}.attn.b_k"], nh)
        v = _split_heads(a_in @ params[f"{pre}.attn.w_v"] + params[f"{pre}.attn.b_v"], nh)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        if causal:
            scores = np.where(neg_mask, dtype(-np.inf), scores)
        attn = _softmax_last(scores)
        heads = _merge_heads(attn @ v)
        attn_out = heads @ params[f"{pre}.attn.w_o"] + params[f"{pre}.attn.b_o"]
        x_mid = x + attn_out

        f_in, xhat2, inv2 = _layer_norm(
            x_mid, params[f"{pre}.ln2.gain"], params[f"{pre}.ln2.bias"]
        )
        h_pre = f_in @ params[f"{pre}.ffn.w1"] + params[f"{pre}.ffn.b1"]
        h_act = gelu(h_pre)
        ffn_out = h_act @ params[f"{pre}.ffn.w2"] + params[f"{pre}.ffn.b2"]
        x_next = x_mid + ffn_out

        if want_cache:
            layers_cache.append(
                dict(
                    x=x, xhat1=xhat1, inv1=inv1, a_in=a_in, q=q, k=k, v=v,
                    attn=attn, heads=heads, x_mid=x_mid, xhat2=xhat2, inv2=inv2,
                    f_in=f_in, h_pre=h_pre, h_act=h_act,
                )
            )
        x = x_next

    z, xhat_f, inv_f = _layer_norm(x, params["final_ln.gain"], params["final_ln.bias"])
    g = z.mean(axis=1)
    g_act = gelu(g)
    u, xhat_h, inv_h = _layer_norm(g_act, params["head_ln.gain"], params["head_ln.bias"])
    v_scores = u @ params["head.w_c"]

    # token probabilities in float64 so each block sums to 1 within 1e-9
    blocks = v_scores.astype(np.float64).reshape(b, cfg.num_channels, cfg.num_tokens)
    dists = _softmax_last(blocks)

    cache = None
    if want_cache:
        cache = dict(
            cfg=cfg, params=params, p=x_in, e_tilde=e_tilde, layers=layers_cache,
            x_last=x, xhat_f=xhat_f, inv_f=inv_f, z=z, g=g, g_act=g_act,
            xhat_h=xhat_h, inv_h=inv_h, u=u, v=v_scores, dists=dists,
        )
    return dists, cache


def backward_from_scores(cache: dict, d_scores: np.ndarray) -> dict[str, np.ndarray]:
    """Backpropagate d loss / d v (shape (B, K*C) or (B, C, K)) to every parameter.

    Gradients are returned for all parameters; the optimiser decides which
    subset to apply.
    """
    cfg: BackboneConfig = cache["cfg"]
    params: ModelParameters = cache["params"]
    dtype = params.dtype.type
    b, t = cache["p"].shape[0], cfg.max_seq_len
    nh, dh = cfg.num_heads, cfg.head_dim
    scale = dtype(1.0 / np.sqrt(dh))
    grads: dict[str, np.ndarray] = {}

    dv = np.ascontiguousarray(d_scores, dtype=dtype).reshape(b, -1)

    grads["head.w_c"] = cache["u"].T @ dv
    du = dv @ params["head.w_c"].T
    dg_act, grads["head_ln.gain"], grads["head_ln.bias"] = _layer_norm_backward(
        du, cache["xhat_h"], cache["inv_h"], params["head_ln.gain"]
    )
    dg = dg_act * gelu_grad(cache["g"])
    dz = np.repeat(dg[:, None, :], t, axis=1) / dtype(t)
    dx, grads["final_ln.gain"], grads["final_ln.bias"] = _layer_norm_backward(
        dz, cache["xhat_f"], cache["inv_f"], params["final_ln.gain"]
    )

    for l in range(cfg.num_layers - 1, -1, -1):
        pre = f"layers.{l}"
        lc = cache["layers"][l]

        # feed-forward branch
        d_ffn_out = dx
        flat_h = lc["h_act"].reshape(b * t, -1)
        flat_dffn = d_ffn_out.reshape(b * t, -1)
        grads[f"{pre}.ffn.w2"] = flat_h.T @ flat_dffn
        grads[f"{pre}.ffn.b2"] = flat_dffn.sum(axis=0)
        dh_act = d_ffn_out @ params[f"{pre}.ffn.w2"].T
        dh_pre = dh_act * gelu_grad(lc["h_pre"])
        flat_fin = lc["f_in"].reshape(b * t, -1)
        flat_dhpre = dh_pre.reshape(b * t, -1)
        grads[f"{pre}.ffn.w1"] = flat_fin.T @ flat_dhpre
        grads[f"{pre}.ffn.b1"] = flat_dhpre.sum(axis=0)
        df_in = dh_pre @ params[f"{pre}.ffn.w1"].T
        dx_mid_ln, grads[f"{pre}.ln2.gain"], grads[f"{pre}.ln2.bias"] = _layer_norm_backward(
            df_in, lc["xhat2"], lc["inv2"], params[f"{pre}.ln2.gain"]
        )
        dx_mid = dx + dx_mid_ln

        # attention branch
        d_attn_out = dx_mid
        flat_heads = lc["heads"].reshape(b * t, -1)
        flat_dao = d_attn_out.reshape(b * t, -1)
        grads[f"{pre}.attn.w_o"] = flat_heads.T @ flat_dao
        grads[f"{pre}.attn.b_o"] = flat_dao.sum(axis=0)
        d_heads = _split_heads(d_attn_out @ params[f"{pre}.attn.w_o"].T, nh)

        d_attn = d_heads @ lc["v"].transpose(0, 1, 3, 2)
        dv_h = lc["attn"].transpose(0, 1, 3, 2) @ d_heads
        a = lc["attn"]
        d_scores_attn = a * (d_attn - np.sum(d_attn * a, axis=-1, keepdims=True))
        dq = (d_scores_attn @ lc["k"]) * scale
        dk = (d_scores_attn.transpose(0, 1, 3, 2) @ lc["q"]) * scale

        dq_f = _merge_heads(dq).reshape(b * t, -1)
        dk_f = _merge_heads(dk).reshape(b * t, -1)
        dv_f = _merge_heads(dv_h).reshape(b * t, -1)
        flat_ain = lc["a_in"].reshape(b * t, -1)
        grads[f"{pre}.attn.w_q"] = flat_ain.T @ dq_f
        grads[f"{pre}.attn.b_q"] = dq_f.sum(axis=0)
        grads[f"{pre}.attn.w_k"] = flat_ain.T @ dk_f
        grads[f"{pre}.attn.b_k"] = dk_f.sum(axis=0)
        grads[f"{pre}.attn.w_v"] = flat_ain.T @ dv_f
        grads[f"{pre}.attn.b_v"] = dv_f.sum(axis=0)

        da_in = (
            dq_f @ params[f"{pre}.attn.w_q"].T
            + dk_f @ params[f"{pre}.attn.w_k"].T
            + dv_f @ params[f"{pre}.attn.w_v"].T
        ).reshape(b, t, -1)
        dx_ln, grads[f"{pre}.ln1.gain"], grads[f"{pre}.ln1.bias"] = _layer_norm_backward(
            da_in, lc["xhat1"], lc["inv1"], params[f"{pre}.ln1.gain"]
        )
        dx = dx_mid + dx_ln

    grads["pos.p_pos"] = dx.sum(axis=0)
    flat_p = cache["p"].reshape(b * t, -1)
    grads["embed.w_e"] = flat_p.T @ dx.reshape(b * t, -1)
    return grads


def _as_rows(mcps) -> np.ndarray:
    if isinstance(mcps, PatchSequence):
        return mcps.rows
    return np.asarray(mcps)


def embed_and_position(mcps, params: ModelParameters) -> tuple[np.ndarray, np.ndarray]:
    """E = P @ W_E and E~ = E + P_pos for one window."""
    rows = _as_rows(mcps).astype(params.dtype)
    pos = params["pos.p_pos"]
    if rows.shape != (pos.shape[0], params["embed.w_e"].shape[0]):
        raise ValueError("window shape differs from training configuration")
    e = rows @ params["embed.w_e"]
    return e, e + pos


def encode_context(e_tilde: np.ndarray, params: ModelParameters, cfg: BackboneConfig) -> np.ndarray:
    """Contextualise one window's E~ through the Transformer blocks."""
    dtype = params.dtype.type
    x = np.asarray(e_tilde, dtype=dtype)[None, :, :]
    if x.shape[1] != cfg.max_seq_len or x.shape[2] != cfg.hidden_dim:
        raise ValueError("window shape differs from training configuration")
    nh, dh = cfg.num_heads, cfg.head_dim
    scale = dtype(1.0 / np.sqrt(dh))
    t = cfg.max_seq_len
    causal = cfg.attention_mode == "causal"
    if causal:
        neg_mask = np.triu(np.ones((t, t), dtype=bool), k=1)
    for l in range(cfg.num_layers):
        pre = f"layers.{l}"
        a_in, _, _ = _layer_norm(x, params[f"{pre}.ln1.gain"], params[f"{pre}.ln1.bias"])
        q = _split_heads(a_in @ params[f"{pre}.attn.w_q"] + params[f"{pre}.attn.b_q"], nh)
        k = _split_heads(a_in @ params[f"{pre}.attn.w_k"] + params[f"{pre}.attn.b_k"], nh)
        v = _split_heads(a_in @ params[f"{pre}.attn.w_v"] + params[f"{pre}.attn.b_v"], nh)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        if causal:
            scores = np.where(neg_mask, dtype(-np.inf), scores)
        heads = _merge_heads(_softmax_last(scores) @ v)
        x = x + heads @ params[f"{pre}.attn.w_o"] + params[f"{pre}.attn.b_o"]
        f_in, _, _ = _layer_norm(x, params[f"{pre}.ln2.gain"], params[f"{pre}.ln2.bias"])
        h_act = gelu(f_in @ params[f"{pre}.ffn.w1"] + params[f"{pre}.ffn.b1"])
        x = x + h_act @ params[f"{pre}.ffn.w2"] + params[f"{pre}.ffn.b2"]
    z, _, _ = _layer_norm(x, params["final_ln.gain"], params["final_ln.bias"])
    return z[0]


def pool_and_predict(
    z: np.ndarray, params: ModelParameters, cfg: BackboneConfig
) -> tuple[np.ndarray, TokenDistributions]:
    """Mean-pool Z, run the head, and split scores into per-channel softmaxes."""
    z = np.asarray(z, dtype=params.dtype)
    g = z.mean(axis=0)
    u, _, _ = _layer_norm(gelu(g), params["head_ln.gain"], params["head_ln.bias"])
    v = u @ params["head.w_c"]
    blocks = v.astype(np.float64).reshape(cfg.num_channels, cfg.num_tokens)
    return g, TokenDistributions(per_channel=_softmax_last(blocks))


def forward_trace(mcps, params: ModelParameters, cfg: BackboneConfig) -> ForwardTrace:
    """Full single-window forward pass with every intermediate retained."""
    rows = _as_rows(mcps)
    dists, cache = forward_batch(rows[None, :, :], params, cfg, want_cache=True)
    return ForwardTrace(
        E=cache["p"][0] @ params["embed.w_e"],
        E_tilde=cache["e_tilde"][0],
        Z=cache["z"][0],
        g=cache["g"][0],
        u=cache["u"][0],
        v=cache["v"][0],
        distributions=TokenDistributions(per_channel=dists[0]),
    )


class CheckpointError(ValueError):
    """Raised when a checkpoint file cannot be read or fails validation."""


@dataclass
class Checkpoint:
    """Everything needed to redeploy a trained model on a stream."""

    params: ModelParameters
    config: BackboneConfig
    stats: ChannelStats
    window_len: int
    context_len: int
    channel_names: list[str]
    codebook_hash: str


def save_checkpoint(
    path: str,
    params: ModelParameters,
    cfg: BackboneConfig,
    stats: ChannelStats,
    window_len: int,
    context_len: int,
    channel_names: Iterable[str],
    codebook_hash: str,
) -> None:
    """Write the binary checkpoint: LORM magic, u32 version, length-prefixed
    JSON metadata, then all parameters as little-endian float32 in canonical
    order."""
    meta = {
        "config": cfg.to_dict(),
        "windowing": {"window_len": window_len, "context_len": context_len},
        "stats": {
            "mean": [float(x) for x in stats.mean],
            "std": [float(x) for x in stats.std],
            "epsilon": float(stats.epsilon),
        },
        "channel_names": list(channel_names),
        "codebook_hash": codebook_hash,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    expected = [name for name, _ in param_shapes(cfg)]
    if params.names() != expected:
        raise CheckpointError("parameters do not match the configuration's canonical order")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in expected:
            fh.write(np.ascontiguousarray(params[name], dtype="<f4").tobytes())


def load_checkpoint(path: str) -> Checkpoint:
    """Read a checkpoint; load(save(x)) is byte-equivalent to x for float32
    parameters."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", data, 8)
    try:
        meta = json.loads(data[12 : 12 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata block ({exc})") from None
    cfg = BackboneConfig.from_dict(meta["config"])
    shapes = param_shapes(cfg)
    total = sum(int(np.prod(s)) for _, s in shapes)
    raw = data[12 + meta_len :]
    if len(raw) != 4 * total:
        raise CheckpointError(
            f"{path}: parameter block holds {len(raw)} bytes, expected {4 * total}"
        )
    flat = np.frombuffer(raw, dtype="<f4")
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        tensors[name] = flat[offset : offset + size].reshape(shape).copy()
        offset += size
    stats = ChannelStats(
        mean=np.asarray(meta["stats"]["mean"]),
        std=np.asarray(meta["stats"]["std"]),
        epsilon=meta["stats"]["epsilon"],
    )
    return Checkpoint(
        params=ModelParameters(tensors),
        config=cfg,
        stats=stats,
        window_len=meta["windowing"]["window_len"],
        context_len=meta["windowing"]["context_len"],
        channel_names=list(meta["channel_names"]),
        codebook_hash=meta["codebook_hash"],
    )
