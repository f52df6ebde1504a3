"""Feature-grid encoder and causal caption decoder.

Architecture: project CNN feature grids to d_model, add sinusoidal positions,
run one multi-head self-attention block with a residual and a single layer
norm (encoder); the decoder embeds tokens (scaled by sqrt(d_model)), adds
positions, then runs causal self-attention, cross-attention over the encoder
memory, and a position-wise ReLU FFN, each sublayer post-normed around a
residual. The output head emits raw vocab logits; softmax lives in the loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .ndcore import Graph, Tensor
from .textpipe import MAX_VOCAB

# Additive bias for forbidden attention positions. Finite so backward never
# multiplies 0 * inf; large enough that exp underflows to exactly 0.0.
MASK_BIAS = -1e9


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    feat_len: int
    feat_dim: int
    d_model: int = 512
    n_heads: int = 8
    seq_len: int = 24
    ffn_dim: int = 2048

    def __post_init__(self):
        if not 4 <= self.vocab_size <= MAX_VOCAB:
            raise ConfigError(f"vocab_size {self.vocab_size} outside [4, {MAX_VOCAB}]")
        if self.d_model <= 0 or self.d_model % 2:
            raise ConfigError(f"d_model must be positive and even, got {self.d_model}")
        if self.n_heads <= 0 or self.d_model % self.n_heads:
            raise ConfigError(f"n_heads {self.n_heads} must divide d_model {self.d_model}")
        if self.seq_len < 3:
            raise ConfigError(f"seq_len must be >= 3, got {self.seq_len}")
        if self.feat_len < 1 or self.feat_dim < 1 or self.ffn_dim < 1:
            raise ConfigError("feat_len, feat_dim and ffn_dim must be positive")


def positional_encoding(seq_len: int, d_model: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal table [seq_len, d_model]: sin on even cols, cos on odd."""
    if d_model % 2:
        raise ConfigError(f"positional encoding needs even d_model, got {d_model}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    idx = np.arange(0, d_model, 2, dtype=np.float64)
    ang = pos / np.power(10000.0, idx / d_model)
    pe = np.zeros((seq_len, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang)
    return pe.astype(dtype)


class AttentionMask:
    """Boolean [Tq, Tk] grid; True means the query row may see that key."""

    def __init__(self, allowed):
        m = np.asarray(allowed, dtype=bool)
        if m.ndim != 2:
            raise ShapeError(f"mask must be rank 2, got shape {m.shape}")
        if not m.any(axis=1).all():
            raise ContractError("mask forbids every key for at least one query row")
        self.allowed = m

    @property
    def shape(self):
        return self.allowed.shape

    def __and__(self, other: "AttentionMask") -> "AttentionMask":
        if self.allowed.shape != other.allowed.shape:
            raise ShapeError(f"mask shapes differ: {self.shape} vs {other.shape}")
        return AttentionMask(self.allowed & other.allowed)

    def bias(self, dtype) -> np.ndarray:
        return np.where(self.allowed, 0.0, MASK_BIAS).astype(dtype)


def causal_mask(t: int) -> AttentionMask:
    """Lower-triangular including the diagonal: position i sees j <= i."""
    if t < 1:
        raise ContractError(f"causal_mask needs t >= 1, got {t}")
    return AttentionMask(np.tril(np.ones((t, t), dtype=bool)))


def scaled_dot_product_attention(g: Graph, q: Tensor, k: Tensor, v: Tensor,
                                 mask: AttentionMask | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d_k) + mask_bias) v over the trailing two axes."""
    dk = q.shape[-1]
    if k.shape[-1] != dk:
        raise ShapeError(f"q/k depth differs: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"k/v length differs: {k.shape} vs {v.shape}")
    nd = k.data.ndim
    kt = g.transpose(k, tuple(range(nd - 2)) + (nd - 1, nd - 2))
    scores = g.scale(g.matmul(q, kt), 1.0 / math.sqrt(dk))
    if mask is not None:
        if mask.shape != (q.shape[-2], k.shape[-2]):
            raise ShapeError(f"mask {mask.shape} does not cover "
                             f"Tq={q.shape[-2]}, Tk={k.shape[-2]}")
        scores = g.add(scores, Tensor(mask.bias(q.dtype)))
    return g.matmul(g.softmax(scores, axis=-1), v)


def multi_head_attention(g: Graph, x_q: Tensor, x_kv: Tensor, params: "ModelParams",
                         prefix: str, n_heads: int,
                         mask: AttentionMask | None = None) -> Tensor:
    """Project, split into heads, attend, merge, project out.

    Weights are read from params as {prefix}.wq/.wk/.wv/.wo, each [d, d].
    """
    b, tq, d = x_q.shape
    tk = x_kv.shape[1]
    if d % n_heads:
        raise ConfigError(f"n_heads {n_heads} must divide width {d}")
    dh = d // n_heads
    q = g.matmul(x_q, params[prefix + ".wq"])
    k = g.matmul(x_kv, params[prefix + ".wk"])
    v = g.matmul(x_kv, params[prefix + ".wv"])

    def split(t: Tensor, tlen: int) -> Tensor:
        return g.transpose(g.reshape(t, (b, tlen, n_heads, dh)), (0, 2, 1, 3))

    o = scaled_dot_product_attention(g, split(q, tq), split(k, tk), split(v, tk), mask)
    o = g.reshape(g.transpose(o, (0, 2, 1, 3)), (b, tq, d))
    return g.matmul(o, params[prefix + ".wo"])


# ---------------------------------------------------------------------------
# parameters


def _param_specs(cfg: ModelConfig) -> list[tuple[str, tuple, str]]:
    """(name, shape, init kind) for every trainable tensor, in layer order."""
    d, f = cfg.d_model, cfg.ffn_dim
    specs = [
        ("token_embedding", (cfg.vocab_size, d), "embed"),
        ("feat_proj.w", (cfg.feat_dim, d), "glorot"),
        ("feat_proj.b", (d,), "zeros"),
    ]
    for name in ("enc.attn", "dec.self_attn", "dec.cross_attn"):
        for w in ("wq", "wk", "wv", "wo"):
            specs.append((f"{name}.{w}", (d, d), "glorot"))
    for name in ("enc.norm", "dec.norm1", "dec.norm2", "dec.norm3"):
        specs.append((f"{name}.g", (d,), "ones"))
        specs.append((f"{name}.b", (d,), "zeros"))
    specs.extend([
        ("dec.ffn.w1", (d, f), "glorot"),
        ("dec.ffn.b1", (f,), "zeros"),
        ("dec.ffn.w2", (f, d), "glorot"),
        ("dec.ffn.b2", (d,), "zeros"),
        ("head.w", (d, cfg.vocab_size), "glorot"),
        ("head.b", (cfg.vocab_size,), "zeros"),
    ])
    return specs


def param_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in _param_specs(cfg))


class ModelParams:
    """Named trainable tensors in a stable order."""

    def __init__(self, tensors: dict[str, Tensor]):
        self._tensors = dict(tensors)

    @classmethod
    def create(cls, cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> "ModelParams":
        """Seeded init: glorot-uniform projections, N(0, d^-1/2) embeddings,
        unit gains, zero biases."""
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape, kind in _param_specs(cfg):
            if kind == "glorot":
                limit = math.sqrt(6.0 / (shape[0] + shape[1]))
                arr = rng.uniform(-limit, limit, size=shape)
            elif kind == "embed":
                arr = rng.normal(0.0, cfg.d_model ** -0.5, size=shape)
            elif kind == "ones":
                arr = np.ones(shape)
            else:
                arr = np.zeros(shape)
            tensors[name] = Tensor(arr.astype(dtype), requires_grad=True)
        return cls(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self):
        return self._tensors.values()

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({n: t.astype(dtype) for n, t in self._tensors.items()})

    def size(self) -> int:
        return sum(t.size for t in self._tensors.values())


def config_key(cfg: ModelConfig) -> str:
    """Canonical architecture string, the hashing base for checkpoints."""
    return ",".join(f"{f.name}={getattr(cfg, f.name)}" for f in sorted(fields(cfg), key=lambda f: f.name))


# ---------------------------------------------------------------------------
# forward passes


def encoder_forward(g: Graph, features: Tensor, params: ModelParams,
                    cfg: ModelConfig) -> Tensor:
    """Feature grid [B, feat_len, feat_dim] to memory [B, feat_len, d_model]."""
    if features.data.ndim != 3:
        raise ShapeError(f"features must be [B, feat_len, feat_dim], got {features.shape}")
    if features.shape[1] != cfg.feat_len or features.shape[2] != cfg.feat_dim:
        raise ConfigError(f"feature grid {features.shape[1:]} does not match "
                          f"config ({cfg.feat_len}, {cfg.feat_dim})")
    x = g.add(g.matmul(features, params["feat_proj.w"]), params["feat_proj.b"])
    x = g.add(x, Tensor(positional_encoding(cfg.feat_len, cfg.d_model, features.dtype)))
    a = multi_head_attention(g, x, x, params, "enc.attn", cfg.n_heads)
    return g.layer_norm(g.add(x, a), params["enc.norm.g"], params["enc.norm.b"])


def decoder_forward(g: Graph, tokens, memory: Tensor, params: ModelParams,
                    cfg: ModelConfig) -> Tensor:
    """Token prefix [B, T] plus memory to next-token logits [B, T, vocab]."""
    ids = np.asarray(tokens)
    if ids.ndim != 2:
        raise ShapeError(f"tokens must be [B, T], got shape {ids.shape}")
    t = ids.shape[1]
    if not 1 <= t <= cfg.seq_len:
        raise ContractError(f"decoder length {t} outside [1, {cfg.seq_len}]")
    if ids.shape[0] != memory.shape[0]:
        raise ShapeError(f"batch mismatch: tokens {ids.shape[0]} vs memory {memory.shape[0]}")

    x = g.scale(g.embedding(params["token_embedding"], ids), math.sqrt(cfg.d_model))
    x = g.add(x, Tensor(positional_encoding(t, cfg.d_model, memory.dtype)))

    sa = multi_head_attention(g, x, x, params, "dec.self_attn", cfg.n_heads, causal_mask(t))
    x = g.layer_norm(g.add(x, sa), params["dec.norm1.g"], params["dec.norm1.b"])

    ca = multi_head_attention(g, x, memory, params, "dec.cross_attn", cfg.n_heads)
    x = g.layer_norm(g.add(x, ca), params["dec.norm2.g"], params["dec.norm2.b"])

    h = g.relu(g.add(g.matmul(x, params["dec.ffn.w1"]), params["dec.ffn.b1"]))
    h = g.add(g.matmul(h, params["dec.ffn.w2"]), params["dec.ffn.b2"])
    x = g.layer_norm(g.add(x, h), params["dec.norm3.g"], params["dec.norm3.b"])

    return g.add(g.matmul(x, params["head.w"]), params["head.b"])


class Model:
    """Config + params bundle with the two forward passes as methods."""

    def __init__(self, config: ModelConfig, params: ModelParams | None = None,
                 seed: int = 0, dtype=np.float32):
        self.config = config
        self.params = params if params is not None else ModelParams.create(config, seed, dtype)

    def encode(self, g: Graph, features: Tensor) -> Tensor:
        return encoder_forward(g, features, self.params, self.config)

    def decode(self, g: Graph, tokens, memory: Tensor) -> Tensor:
        return decoder_forward(g, tokens, memory, self.params, self.config)

    def forward(self, g: Graph, features: Tensor, tokens) -> Tensor:
        return self.decode(g, tokens, self.encode(g, features))
