"""Multi-scale deformable attention encoder/decoder with query-derived anchors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .backbone import FlattenedSequence
from .config import TransformerConfig
from .layers import LayerNorm, Linear, Module, Parameter
from .numerics import Array


@dataclass
class DeformAttnConfig:
    heads: int
    points: int
    levels: int
    model_dim: int
    layers: int = 1

    def __post_init__(self):
        if min(self.heads, self.points, self.levels, self.model_dim, self.layers) <= 0:
            raise ValueError("deformable attention sizes must be positive")
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by {self.heads} heads")


@dataclass
class Memory:
    """Encoder output plus the level layout needed to sample from it."""

    values: Array  # (B, N_S, C_d)
    level_shapes: list[tuple[int, int]]
    level_start: list[int]
    padding_mask: np.ndarray  # (B, N_S)
    valid_ratios: np.ndarray  # (B, 2)


def ring_offsets(heads: int, levels: int, points: int) -> np.ndarray:
    """Initial sampling offsets, in level pixels, on rings around the reference.

    Each (head, point) pair gets its own direction; point k sits at radius
    k + 1. Shape (heads, levels, points, 2).
    """
    angles = 2 * math.pi * np.arange(heads * points).reshape(heads, points) / (heads * points)
    radius = np.arange(1, points + 1)[None, :]
    ring = np.stack([np.cos(angles) * radius, np.sin(angles) * radius], axis=-1)
    return np.repeat(ring[:, None], levels, axis=1)


class MSDeformAttn(Module):
    """Per head, sample L*K bilinear points around a reference and mix them with
    softmax weights; offsets and weight logits are linear in the query."""

    def __init__(self, cfg: DeformAttnConfig, rng: np.random.Generator):
        self.cfg = cfg
        M, L, K, C = cfg.heads, cfg.levels, cfg.points, cfg.model_dim
        self.sampling_offsets = Linear(C, M * L * K * 2, rng, init="zeros")
        self.sampling_offsets.bias.assign(ring_offsets(M, L, K).reshape(-1))
        self.sampling_offsets.bias.init_spec = "ring"
        self.attention_weights = Linear(C, M * L * K, rng, init="zeros")
        self.value_proj = Linear(C, C, rng)
        self.output_proj = Linear(C, C, rng)

    def attention_weights_of(self, query: Array) -> Array:
        """Softmax weights, (B, N_q, M, L*K)."""
        B, Nq, _ = query.shape
        M, L, K = self.cfg.heads, self.cfg.levels, self.cfg.points
        logits = self.attention_weights(query).reshape(B, Nq, M, L * K)
        return nx.softmax(logits, axis=-1)

    def forward(self, query: Array, reference: Array | np.ndarray, memory_input: Array,
                level_shapes, level_start, padding_mask: np.ndarray | None = None) -> Array:
        """``query`` (B, N_q, C); ``reference`` (B, N_q, 2) in [0, 1] normalized
        coordinates of the padded maps; ``memory_input`` (B, N_S, C)."""
        cfg = self.cfg
        M, L, K, C = cfg.heads, cfg.levels, cfg.points, cfg.model_dim
        dh = C // M
        B, Nq, _ = query.shape
        Ns = memory_input.shape[1]
        if len(level_shapes) != L:
            raise ValueError(f"expected {L} levels, got {len(level_shapes)}")
        if sum(h * w for h, w in level_shapes) != Ns:
            raise ValueError("level table does not match memory length")
        reference = nx.as_array(reference, query)
        ref = reference.data
        if not np.isfinite(ref).all() or ref.min() < 0.0 or ref.max() > 1.0:
            raise ValueError("reference points must lie in [0, 1]^2")

        value = self.value_proj(memory_input)
        if padding_mask is not None and padding_mask.any():
            value = value * Array((~padding_mask)[..., None], dtype=value.dtype)
        value = value.reshape(B, Ns, M, dh).transpose(0, 2, 1, 3)  # (B, M, Ns, dh)

        offsets = self.sampling_offsets(query).reshape(B, Nq, M, L, K, 2)
        weights = self.attention_weights_of(query).reshape(B, Nq, M, L, K)
        extent = np.array([[w, h] for h, w in level_shapes], dtype=value.dtype)
        locations = reference.reshape(B, Nq, 1, 1, 1, 2) + offsets / extent[None, None, None, :, None, :]

        sampled = []
        for li, (h, w) in enumerate(level_shapes):
            start = level_start[li]
            v = value[:, :, start:start + h * w, :].reshape(B * M, h, w, dh)
            p = locations[:, :, :, li].transpose(0, 2, 1, 3, 4).reshape(B * M, Nq * K, 2)
            sampled.append(nx.grid_sample(v, p).reshape(B, M, Nq, K, dh))
        sampled = nx.stack(sampled, axis=3)  # (B, M, Nq, L, K, dh)
        w = weights.transpose(0, 2, 1, 3, 4).reshape(B, M, Nq, L, K, 1)
        heads = (sampled * w).sum(axis=(3, 4))  # (B, M, Nq, dh)
        out = heads.transpose(0, 2, 1, 3).reshape(B, Nq, C)
        return self.output_proj(out)


class MultiheadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.heads = heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)

    def forward(self, q_in: Array, k_in: Array, v_in: Array) -> Array:
        B, N, C = q_in.shape
        M = self.heads
        dh = C // M

        def split(x):
            return x.reshape(B, -1, M, dh).transpose(0, 2, 1, 3)

        q = split(self.q_proj(q_in)) * (1.0 / math.sqrt(dh))
        k = split(self.k_proj(k_in))
        v = split(self.v_proj(v_in))
        attn = nx.softmax(q @ nx.swapaxes(k, -1, -2), axis=-1)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(B, N, C)
        return self.out_proj(out)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.linear1 = Linear(dim, hidden, rng)
        self.linear2 = Linear(hidden, dim, rng)

    def forward(self, x: Array) -> Array:
        return self.linear2(nx.relu(self.linear1(x)))


class EncoderLayer(Module):
    def __init__(self, cfg: DeformAttnConfig, ffn_dim: int, rng):
        self.self_attn = MSDeformAttn(cfg, rng)
        self.norm1 = LayerNorm(cfg.model_dim)
        self.ffn = FeedForward(cfg.model_dim, ffn_dim, rng)
        self.norm2 = LayerNorm(cfg.model_dim)

    def forward(self, src: Array, pos: Array, reference: np.ndarray, seq: FlattenedSequence) -> Array:
        attn = self.self_attn(src + pos, reference, src, seq.level_shapes, seq.level_start, seq.padding_mask)
        src = self.norm1(src + attn)
        return self.norm2(src + self.ffn(src))


class DecoderLayer(Module):
    def __init__(self, cfg: DeformAttnConfig, ffn_dim: int, rng):
        self.self_attn = MultiheadAttention(cfg.model_dim, cfg.heads, rng)
        self.norm1 = LayerNorm(cfg.model_dim)
        self.cross_attn = MSDeformAttn(cfg, rng)
        self.norm2 = LayerNorm(cfg.model_dim)
        self.ffn = FeedForward(cfg.model_dim, ffn_dim, rng)
        self.norm3 = LayerNorm(cfg.model_dim)

    def forward(self, tgt: Array, query_pos: Array, reference: Array, memory: Memory) -> Array:
        qk = tgt + query_pos
        tgt = self.norm1(tgt + self.self_attn(qk, qk, tgt))
        cross = self.cross_attn(tgt, reference, memory.values, memory.level_shapes,
                                memory.level_start, memory.padding_mask)
        tgt = self.norm2(tgt + cross)
        return self.norm3(tgt + self.ffn(tgt))


class Encoder(Module):
    def __init__(self, cfg: DeformAttnConfig, ffn_dim: int, rng):
        self.layers = [EncoderLayer(cfg, ffn_dim, rng) for _ in range(cfg.layers)]

    def encode(self, seq: FlattenedSequence, pos: Array) -> Memory:
        """Deformable self-attention over all tokens; each token's reference is its own position."""
        B = seq.tokens.shape[0]
        reference = np.broadcast_to(seq.positions, (B,) + seq.positions.shape).astype(seq.tokens.dtype)
        pos = pos.reshape((1,) + pos.shape) if pos.ndim == 2 else pos
        x = seq.tokens
        for layer in self.layers:
            x = layer(x, pos, reference, seq)
        return Memory(x, seq.level_shapes, seq.level_start, seq.padding_mask, seq.valid_ratios)

    forward = encode


class QueryBank(Module):
    """Learned N_q x 2C_d query embeddings; the second half yields the anchors."""

    def __init__(self, num_queries: int, model_dim: int, rng: np.random.Generator):
        self.embedding = Parameter(rng.standard_normal((num_queries, 2 * model_dim)), init_spec="normal(1.0)")
        self.anchor_proj = Linear(model_dim, 2, rng)
        self.model_dim = model_dim

    @property
    def hoi_queries(self) -> Array:
        return self.embedding[:, : self.model_dim]

    @property
    def pos_queries(self) -> Array:
        return self.embedding[:, self.model_dim:]

    def generate_anchors(self) -> Array:
        """Anchors P = sigmoid(linear(Q_Pos)), (N_q, 2) in (0, 1); image independent."""
        return nx.sigmoid(self.anchor_proj(self.pos_queries))

    forward = generate_anchors


class Decoder(Module):
    def __init__(self, cfg: DeformAttnConfig, ffn_dim: int, rng):
        self.layers = [DecoderLayer(cfg, ffn_dim, rng) for _ in range(cfg.layers)]

    def decode(self, bank: QueryBank, anchors: Array, memory: Memory) -> list[Array]:
        """HOI embeddings of every layer, each (B, N_q, C_d); the last one feeds the head."""
        B = memory.values.shape[0]
        Nq, C = anchors.shape[0], bank.model_dim
        tgt = bank.hoi_queries.reshape(1, Nq, C) * Array(np.ones((B, 1, 1)), dtype=anchors.dtype)
        query_pos = bank.pos_queries.reshape(1, Nq, C)
        ratios = Array(memory.valid_ratios.reshape(B, 1, 2), dtype=anchors.dtype)
        reference = anchors.reshape(1, Nq, 2) * ratios
        outputs = []
        for layer in self.layers:
            tgt = layer(tgt, query_pos, reference, memory)
            outputs.append(tgt)
        return outputs

    forward = decode


def attn_config(tcfg: TransformerConfig, model_dim: int, levels: int) -> DeformAttnConfig:
    return DeformAttnConfig(heads=tcfg.heads, points=tcfg.points, levels=levels,
                            model_dim=model_dim, layers=tcfg.layers)
