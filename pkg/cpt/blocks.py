#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Transformer building blocks: multi-head attention (full, causal, cross),
post-norm encoder and decoder layers, and the input embedding.

Activations are batch-first ``(batch, time, hidden)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Literal, Mapping

import numpy as np

from cpt.exceptions import ConfigError, IndexLookupError, ShapeError
from cpt.tensor import Tensor, dropout, gelu, layer_norm, softmax

# exp(NEG_INF - max) underflows to exactly 0.0 in float64
NEG_INF = -1e9


@dataclass(frozen=True)
class AttentionMask:
    kind: Literal["full", "causal", "padding-only"]
    pad_mask: np.ndarray | None = None  # (batch, keys), True = real token

    def bias(self, q_len: int, k_len: int, q_offset: int = 0) -> np.ndarray | None:
        """Additive score bias of shape (batch or 1, 1, q_len, k_len)."""
        bias = None
        if self.kind == "causal":
            q_pos = np.arange(q_len)[:, None] + q_offset
            future = np.arange(k_len)[None, :] > q_pos
            bias = np.where(future, NEG_INF, 0.0)[None, None]
        if self.pad_mask is not None:
            pad_mask = np.asarray(self.pad_mask, dtype=bool)
            if pad_mask.shape[-1] != k_len:
                raise ShapeError(f"pad mask covers {pad_mask.shape[-1]} keys, attention has {k_len}")
            pad_bias = np.where(pad_mask, 0.0, NEG_INF)[:, None, None, :]
            bias = pad_bias if bias is None else bias + pad_bias
        return bias


############### weights ###############


@dataclass
class AttentionWeights:
    heads: int
    q_w: Tensor
    q_b: Tensor
    k_w: Tensor
    k_b: Tensor
    v_w: Tensor
    v_b: Tensor
    o_w: Tensor
    o_b: Tensor

    NAMES = {
        "q_w": "q.weight", "q_b": "q.bias",
        "k_w": "k.weight", "k_b": "k.bias",
        "v_w": "v.weight", "v_b": "v.bias",
        "o_w": "o.weight", "o_b": "o.bias",
    }

    def __post_init__(self):
        hidden = self.q_w.shape[0]
        if hidden % self.heads:
            raise ConfigError(f"hidden={hidden} is not divisible by heads={self.heads}")

    @staticmethod
    def shapes(hidden: int) -> dict[str, tuple[int, ...]]:
        return {
            name: (hidden, hidden) if name.endswith("weight") else (hidden,)
            for name in AttentionWeights.NAMES.values()
        }

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, Tensor], prefix: str, heads: int) -> AttentionWeights:
        return cls(heads, **{attr: arrays[f"{prefix}.{name}"] for attr, name in cls.NAMES.items()})

    def named_arrays(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{name}": getattr(self, attr) for attr, name in self.NAMES.items()}


@dataclass
class FeedForwardWeights:
    in_w: Tensor
    in_b: Tensor
    out_w: Tensor
    out_b: Tensor

    NAMES = {"in_w": "in.weight", "in_b": "in.bias", "out_w": "out.weight", "out_b": "out.bias"}

    @staticmethod
    def shapes(hidden: int, mult: int) -> dict[str, tuple[int, ...]]:
        inner = hidden * mult
        return {
            "in.weight": (hidden, inner),
            "in.bias": (inner,),
            "out.weight": (inner, hidden),
            "out.bias": (hidden,),
        }

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, Tensor], prefix: str) -> FeedForwardWeights:
        return cls(**{attr: arrays[f"{prefix}.{name}"] for attr, name in cls.NAMES.items()})

    def named_arrays(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{name}": getattr(self, attr) for attr, name in self.NAMES.items()}


@dataclass
class NormWeights:
    gain: Tensor
    bias: Tensor

    @staticmethod
    def shapes(hidden: int) -> dict[str, tuple[int, ...]]:
        return {"gain": (hidden,), "bias": (hidden,)}

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, Tensor], prefix: str) -> NormWeights:
        return cls(arrays[f"{prefix}.gain"], arrays[f"{prefix}.bias"])

    def named_arrays(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


@dataclass
class BlockWeights:
    """One encoder layer, or a decoder layer when the cross-attention set is present."""

    self_attn: AttentionWeights
    self_norm: NormWeights
    ffn: FeedForwardWeights
    ffn_norm: NormWeights
    cross_attn: AttentionWeights | None = None
    cross_norm: NormWeights | None = None

    def __post_init__(self):
        if (self.cross_attn is None) != (self.cross_norm is None):
            raise ConfigError("cross-attention weights and their norm must be given together")

    @property
    def has_cross(self) -> bool:
        return self.cross_attn is not None

    @staticmethod
    def shapes(hidden: int, ffn_mult: int, cross: bool, prefix: str) -> dict[str, tuple[int, ...]]:
        parts = [
            ("self_attn", AttentionWeights.shapes(hidden)),
            ("self_norm", NormWeights.shapes(hidden)),
        ]
        if cross:
            parts += [
                ("cross_attn", AttentionWeights.shapes(hidden)),
                ("cross_norm", NormWeights.shapes(hidden)),
            ]
        parts += [
            ("ffn", FeedForwardWeights.shapes(hidden, ffn_mult)),
            ("ffn_norm", NormWeights.shapes(hidden)),
        ]
        return {f"{prefix}.{part}.{name}": shape for part, table in parts for name, shape in table.items()}

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, Tensor], prefix: str, heads: int, cross: bool) -> BlockWeights:
        return cls(
            self_attn=AttentionWeights.from_arrays(arrays, f"{prefix}.self_attn", heads),
            self_norm=NormWeights.from_arrays(arrays, f"{prefix}.self_norm"),
            ffn=FeedForwardWeights.from_arrays(arrays, f"{prefix}.ffn"),
            ffn_norm=NormWeights.from_arrays(arrays, f"{prefix}.ffn_norm"),
            cross_attn=AttentionWeights.from_arrays(arrays, f"{prefix}.cross_attn", heads) if cross else None,
            cross_norm=NormWeights.from_arrays(arrays, f"{prefix}.cross_norm") if cross else None,
        )

    def named_arrays(self, prefix: str) -> dict[str, Tensor]:
        named = {}
        for f in fields(self):
            part = getattr(self, f.name)
            if part is not None:
                named.update(part.named_arrays(f"{prefix}.{f.name}"))
        return named


def init_array(name: str, shape: tuple[int, ...], rng: np.random.Generator, std: float) -> np.ndarray:
    """normal(0, std) for matrices and embeddings, zeros for biases, ones for norm gains"""
    if name.endswith(".bias"):
        return np.zeros(shape)
    if name.endswith(".gain"):
        return np.ones(shape)
    return rng.normal(0.0, std, size=shape)


############### attention ###############


def project_heads(x: Tensor, w: Tensor, b: Tensor, heads: int) -> Tensor:
    """(batch, time, H) -> (batch, heads, time, H / heads)"""
    batch, time, hidden = x.shape
    y = x @ w + b
    return y.reshape((batch, time, heads, hidden // heads)).transpose((0, 2, 1, 3))


def attend(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    bias: np.ndarray | None,
    weights: AttentionWeights,
) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over projected heads, merged and output-projected."""
    head_dim = q.shape[-1]
    scores = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / math.sqrt(head_dim))
    if bias is not None:
        scores = scores + bias
    probs = softmax(scores, axis=-1)
    ctx = probs @ v
    batch, heads, q_len, _ = ctx.shape
    merged = ctx.transpose((0, 2, 1, 3)).reshape((batch, q_len, heads * head_dim))
    return merged @ weights.o_w + weights.o_b, probs


def multi_head_attention(
    queries: Tensor,
    keys: Tensor,
    values: Tensor,
    mask: AttentionMask,
    weights: AttentionWeights,
    return_weights: bool = False,
):
    hidden = weights.q_w.shape[0]
    for label, t in (("queries", queries), ("keys", keys), ("values", values)):
        if t.ndim != 3 or t.shape[-1] != hidden:
            raise ShapeError(f"{label} must be (batch, time, {hidden}), got {t.shape}")
    heads = weights.heads
    q = project_heads(queries, weights.q_w, weights.q_b, heads)
    k = project_heads(keys, weights.k_w, weights.k_b, heads)
    v = project_heads(values, weights.v_w, weights.v_b, heads)
    out, probs = attend(q, k, v, mask.bias(queries.shape[1], keys.shape[1]), weights)
    if return_weights:
        return out, probs
    return out


def feed_forward(x: Tensor, weights: FeedForwardWeights) -> Tensor:
    return gelu(x @ weights.in_w + weights.in_b) @ weights.out_w + weights.out_b


def add_and_norm(x: Tensor, out: Tensor, norm: NormWeights, eps: float, rate: float = 0.0, rng=None) -> Tensor:
    """Residual connection, dropout on the sublayer output, post-layer-norm."""
    return layer_norm(x + dropout(out, rate, rng), norm.gain, norm.bias, eps)


############### layers ###############


def encoder_layer(
    x: Tensor,
    pad_mask: np.ndarray | None,
    weights: BlockWeights,
    eps: float = 1e-5,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Full self-attention then FFN, each with residual and post-layer-norm."""
    attn = multi_head_attention(x, x, x, AttentionMask("full", pad_mask), weights.self_attn)
    x = add_and_norm(x, attn, weights.self_norm, eps, dropout_rate, rng)
    return add_and_norm(x, feed_forward(x, weights.ffn), weights.ffn_norm, eps, dropout_rate, rng)


def decoder_layer(
    x: Tensor,
    enc_out: Tensor | None,
    causal_mask: AttentionMask,
    enc_pad_mask: np.ndarray | None,
    weights: BlockWeights,
    eps: float = 1e-5,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Causal self-attention, cross-attention to ``enc_out``, FFN; each residual + post-norm."""
    if causal_mask.kind != "causal":
        raise ConfigError(f"decoder self-attention needs a causal mask, got {causal_mask.kind}")
    attn = multi_head_attention(x, x, x, causal_mask, weights.self_attn)
    x = add_and_norm(x, attn, weights.self_norm, eps, dropout_rate, rng)
    if enc_out is not None:
        if not weights.has_cross:
            raise ConfigError("decoder layer has no cross-attention weights for the encoder output")
        cross = multi_head_attention(
            x, enc_out, enc_out, AttentionMask("padding-only", enc_pad_mask), weights.cross_attn
        )
        x = add_and_norm(x, cross, weights.cross_norm, eps, dropout_rate, rng)
    return add_and_norm(x, feed_forward(x, weights.ffn), weights.ffn_norm, eps, dropout_rate, rng)


def embed(
    token_ids,
    position_offset: int,
    embedding_table: Tensor,
    position_table: Tensor,
    norm: NormWeights,
    eps: float = 1e-5,
) -> Tensor:
    """Token embedding plus learned absolute position embedding, then layer norm."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ShapeError(f"token ids must be (batch, time), got {ids.shape}")
    vocab, max_positions = embedding_table.shape[0], position_table.shape[0]
    bad = (ids < 0) | (ids >= vocab)
    if bad.any():
        raise IndexLookupError("token", int(ids[bad][0]), vocab)
    positions = np.arange(ids.shape[1]) + position_offset
    if ids.shape[1] and (position_offset < 0 or positions[-1] >= max_positions):
        offending = position_offset if position_offset < 0 else int(positions[-1])
        raise IndexLookupError("position", offending, max_positions)
    x = embedding_table[ids] + position_table[positions][None]
    return layer_norm(x, norm.gain, norm.bias, eps)
