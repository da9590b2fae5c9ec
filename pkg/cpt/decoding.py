#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Auto-regressive decoding through S-Enc + G-Dec: incremental key/value cache,
greedy search and length-penalized beam search.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from cpt.blocks import AttentionMask, add_and_norm, attend, embed, feed_forward, project_heads
from cpt.exceptions import DecodeCacheError, ShapeError
from cpt.models.config import GenerationConfig
from cpt.network import CPTParams, encode, generate_forward, lm_logits
from cpt.tensor import Tensor, log_softmax, no_grad
from cpt.vocab import BOS_ID, EOS_ID, PAD_ID

log = logging.getLogger("cpt")

# (last tokens (N,), reorder index (N,) or None) -> log-probabilities (N, V)
StepScorer = Callable[[np.ndarray, "np.ndarray | None"], np.ndarray]


@dataclass
class DecodeStats:
    encoder_passes: int = 0
    decode_steps: int = 0
    tokens_generated: int = 0


############### cache ###############


@dataclass
class DecodeCache:
    """Self-attention keys/values per G-Dec layer, plus the cross-attention ones computed once."""

    self_k: list[np.ndarray]  # (rows, heads, t, head_dim)
    self_v: list[np.ndarray]
    cross_k: list[np.ndarray]  # (rows, heads, src, head_dim)
    cross_v: list[np.ndarray]
    cross_bias: np.ndarray | None
    length: int = 0
    cross_computations: int = 0

    @property
    def rows(self) -> int:
        return self.cross_k[0].shape[0] if self.cross_k else 0

    def reorder(self, index: np.ndarray):
        """Select cached rows for the surviving beams. Cross entries are shared per source and stay put."""
        index = np.asarray(index, dtype=np.int64)
        self.self_k = [k[index] for k in self.self_k]
        self.self_v = [v[index] for v in self.self_v]


def pad_rows(rows: Sequence[Sequence[int]], fill: int = PAD_ID) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id rows into ``(ids, pad_mask)``."""
    if not rows:
        raise ShapeError("no rows to pad")
    width = max(len(r) for r in rows)
    ids = np.full((len(rows), width), fill, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, row in enumerate(rows):
        ids[i, : len(row)] = row
        mask[i, : len(row)] = True
    return ids, mask


def project_cross(cache: DecodeCache, enc_states: Tensor, params: CPTParams) -> DecodeCache:
    """(Re)compute every G-Dec layer's cross-attention keys/values from the encoder states."""
    heads = params.config.heads
    with no_grad():
        cache.cross_k = [
            project_heads(enc_states, layer.cross_attn.k_w, layer.cross_attn.k_b, heads).values for layer in params.gdec_layers
        ]
        cache.cross_v = [
            project_heads(enc_states, layer.cross_attn.v_w, layer.cross_attn.v_b, heads).values for layer in params.gdec_layers
        ]
    cache.cross_computations += 1
    return cache


def prefill(enc_states: Tensor, enc_pad_mask, params: CPTParams) -> DecodeCache:
    """An empty self-attention cache with the cross-attention keys/values projected once."""
    heads = params.config.heads
    rows, src = enc_states.shape[0], enc_states.shape[1]
    n = len(params.gdec_layers)
    empty = np.zeros((rows, heads, 0, params.config.hidden // heads))
    cache = DecodeCache(
        self_k=[empty] * n,
        self_v=[empty] * n,
        cross_k=[],
        cross_v=[],
        cross_bias=AttentionMask("padding-only", enc_pad_mask).bias(1, src),
    )
    return project_cross(cache, enc_states, params)


def cached_step(
    next_token,
    cache: DecodeCache,
    enc_states: Tensor | None,
    params: CPTParams,
    position: int | None = None,
) -> tuple[np.ndarray, DecodeCache]:
    """
    Feed one token per row and return its next-token logits ``(rows, V)``.

    ``position`` (when given) must equal the number of tokens already cached.
    """
    tokens = np.asarray(next_token, dtype=np.int64).reshape(-1)
    if position is not None and position != cache.length:
        raise DecodeCacheError(f"step at position {position}, cache holds {cache.length} token(s)")
    if tokens.shape[0] != cache.rows:
        raise DecodeCacheError(f"{tokens.shape[0]} tokens for a cache of {cache.rows} rows")
    if enc_states is not None and enc_states.shape[0] != cache.rows:
        raise DecodeCacheError(f"encoder states have {enc_states.shape[0]} rows, cache {cache.rows}")
    config = params.config
    eps = config.norm_eps
    with no_grad():
        x = embed(tokens[:, None], cache.length, params.token_embeddings, params.position_embeddings, params.gdec_embed_norm, eps)
        for i, layer in enumerate(params.gdec_layers):
            sa = layer.self_attn
            q = project_heads(x, sa.q_w, sa.q_b, sa.heads)
            k = project_heads(x, sa.k_w, sa.k_b, sa.heads).values
            v = project_heads(x, sa.v_w, sa.v_b, sa.heads).values
            cache.self_k[i] = np.concatenate([cache.self_k[i], k], axis=2)
            cache.self_v[i] = np.concatenate([cache.self_v[i], v], axis=2)
            out, _ = attend(q, Tensor(cache.self_k[i]), Tensor(cache.self_v[i]), None, sa)
            x = add_and_norm(x, out, layer.self_norm, eps)

            ca = layer.cross_attn
            q = project_heads(x, ca.q_w, ca.q_b, ca.heads)
            out, _ = attend(q, Tensor(cache.cross_k[i]), Tensor(cache.cross_v[i]), cache.cross_bias, ca)
            x = add_and_norm(x, out, layer.cross_norm, eps)
            x = add_and_norm(x, feed_forward(x, layer.ffn), layer.ffn_norm, eps)
        logits = lm_logits(x, params).values[:, 0, :]
    cache.length += 1
    return logits, cache


def full_prefix_logits(prefix_ids, enc_states: Tensor, enc_pad_mask, params: CPTParams) -> np.ndarray:
    """Next-token logits after ``prefix_ids`` by recomputing the whole prefix."""
    with no_grad():
        states = generate_forward(prefix_ids, enc_states, enc_pad_mask, params)
        return lm_logits(states, params).values[:, -1, :]


def _encode_rows(src_rows, params: CPTParams, stats: DecodeStats | None, repeat: int = 1):
    ids, mask = pad_rows(src_rows)
    with no_grad():
        enc = encode(ids, mask, params)
    if stats is not None:
        stats.encoder_passes += 1
    if repeat > 1:
        enc = Tensor(np.repeat(enc.values, repeat, axis=0))
        mask = np.repeat(mask, repeat, axis=0)
    return enc, mask


############### greedy ###############


def greedy_decode(
    src_rows: Sequence[Sequence[int]],
    params: CPTParams,
    cfg: GenerationConfig,
    use_cache: bool = True,
    stats: DecodeStats | None = None,
) -> list[list[int]]:
    """
    Start from [BOS] and append the argmax token until [EOS] or
    ``max_new_tokens``. Returned rows include the closing [EOS] when one was produced.
    """
    enc, mask = _encode_rows(src_rows, params, stats)
    rows = enc.shape[0]
    cache = prefill(enc, mask, params) if use_cache else None
    prefix = np.full((rows, 1), BOS_ID, dtype=np.int64)
    last = prefix[:, 0]
    outputs: list[list[int]] = [[] for _ in range(rows)]
    done = np.zeros(rows, dtype=bool)
    for step in range(cfg.max_new_tokens):
        if use_cache:
            logits, cache = cached_step(last, cache, enc, params, position=step)
        else:
            logits = full_prefix_logits(prefix, enc, mask, params)
        if cfg.force_length:
            logits[:, EOS_ID] = -np.inf
        choice = np.argmax(logits, axis=-1)
        for r in np.flatnonzero(~done):
            outputs[r].append(int(choice[r]))
            if choice[r] == EOS_ID:
                done[r] = True
        if stats is not None:
            stats.decode_steps += 1
        if done.all():
            break
        last = np.where(done, PAD_ID, choice)
        prefix = np.concatenate([prefix, last[:, None]], axis=1)
    if stats is not None:
        stats.tokens_generated += sum(len(o) for o in outputs)
    return outputs


############### beam search ###############


@dataclass
class Hypothesis:
    tokens: list[int]
    logp: float  # summed log-probability
    score: float  # logp / len(tokens) ** length_penalty
    finished_at: int  # decode step at which the hypothesis closed

    def rank_key(self):
        return (-self.score, self.finished_at, self.tokens)


def length_normalized(logp: float, length: int, length_penalty: float) -> float:
    return logp / (max(length, 1) ** length_penalty)


def beam_search_core(
    step: StepScorer,
    num_sources: int,
    beam_size: int,
    max_new_tokens: int,
    length_penalty: float = 1.0,
    force_length: bool = False,
    eos_id: int = EOS_ID,
    bos_id: int = BOS_ID,
) -> list[list[Hypothesis]]:
    """
    Beam search over any step scorer. Rows ``b * K .. b * K + K - 1`` of each
    step belong to source ``b``. Candidates are ranked with a stable sort, so
    equal scores keep the lower token id first. An [EOS] candidate ranked in
    the top K closes a hypothesis; a source stops once it holds K closed ones.
    Returns the closed hypotheses per source, best first.
    """
    K = beam_size
    scores = np.full((num_sources, K), -np.inf)
    scores[:, 0] = 0.0
    history = np.zeros((num_sources, K, 0), dtype=np.int64)
    finished: list[list[Hypothesis]] = [[] for _ in range(num_sources)]
    done = np.zeros(num_sources, dtype=bool)
    last = np.full(num_sources * K, bos_id, dtype=np.int64)
    reorder = None

    for t in range(max_new_tokens):
        logp = step(last, reorder)
        V = logp.shape[-1]
        logp = logp.reshape(num_sources, K, V).copy()
        if force_length:
            logp[:, :, eos_id] = -np.inf
        candidates = (scores[:, :, None] + logp).reshape(num_sources, K * V)

        new_scores = np.full((num_sources, K), -np.inf)
        new_history = np.zeros((num_sources, K, t + 1), dtype=np.int64)
        reorder = np.arange(num_sources * K)
        last = np.full(num_sources * K, PAD_ID, dtype=np.int64)
        for b in range(num_sources):
            if done[b]:
                continue
            order = np.argsort(-candidates[b], kind="stable")
            live = 0
            for rank, flat in enumerate(order):
                beam, token = divmod(int(flat), V)
                total = float(candidates[b, flat])
                if token == eos_id:
                    if rank < K and np.isfinite(total):
                        tokens = history[b, beam].tolist() + [token]
                        finished[b].append(
                            Hypothesis(tokens, total, length_normalized(total, len(tokens), length_penalty), t)
                        )
                    continue
                new_scores[b, live] = total
                new_history[b, live, :t] = history[b, beam]
                new_history[b, live, t] = token
                reorder[b * K + live] = b * K + beam
                last[b * K + live] = token
                live += 1
                if live == K:
                    break
            if len(finished[b]) >= K:
                done[b] = True
        scores, history = new_scores, new_history
        if done.all():
            break

    for b in range(num_sources):
        if len(finished[b]) >= K:
            continue
        for k in range(K):
            if np.isfinite(scores[b, k]):
                tokens = history[b, k].tolist()
                finished[b].append(
                    Hypothesis(tokens, float(scores[b, k]), length_normalized(scores[b, k], len(tokens), length_penalty), t + 1)
                )
    return [sorted(hyps, key=Hypothesis.rank_key) for hyps in finished]


def score_tokens(step: StepScorer, tokens: Sequence[int], length_penalty: float = 1.0, bos_id: int = BOS_ID) -> float:
    """Length-normalized log-probability of one token sequence under ``step`` (single row)."""
    last = np.array([bos_id], dtype=np.int64)
    total = 0.0
    for token in tokens:
        logp = step(last, None)
        total += float(logp[0, token])
        last = np.array([token], dtype=np.int64)
    return length_normalized(total, len(tokens), length_penalty)


def cpt_step_scorer(enc: Tensor, mask, params: CPTParams, stats: DecodeStats | None = None) -> tuple[StepScorer, DecodeCache]:
    """Step scorer over a prefilled cache for the rows of ``enc``."""
    cache = prefill(enc, mask, params)

    def step(last, reorder):
        if reorder is not None:
            cache.reorder(reorder)
        logits, _ = cached_step(last, cache, enc, params)
        if stats is not None:
            stats.decode_steps += 1
        with no_grad():
            return log_softmax(Tensor(logits), axis=-1).values

    return step, cache


def beam_search(
    src_rows: Sequence[Sequence[int]],
    params: CPTParams,
    cfg: GenerationConfig,
    stats: DecodeStats | None = None,
) -> list[Hypothesis]:
    """Best hypothesis per source row."""
    enc, mask = _encode_rows(src_rows, params, stats, repeat=cfg.beam_size)
    step, _ = cpt_step_scorer(enc, mask, params, stats)
    results = beam_search_core(
        step,
        num_sources=len(src_rows),
        beam_size=cfg.beam_size,
        max_new_tokens=cfg.max_new_tokens,
        length_penalty=cfg.length_penalty,
        force_length=cfg.force_length,
    )
    best = [hyps[0] for hyps in results]
    if stats is not None:
        stats.tokens_generated += sum(len(h.tokens) for h in best)
    return best


def generate(src_rows, params: CPTParams, cfg: GenerationConfig, greedy: bool = False, stats: DecodeStats | None = None) -> list[list[int]]:
    """Token rows for every source, in batches of ``cfg.batch_size``."""
    out = []
    for start in range(0, len(src_rows), cfg.batch_size):
        chunk = src_rows[start : start + cfg.batch_size]
        if greedy:
            out.extend(greedy_decode(chunk, params, cfg, stats=stats))
        else:
            out.extend(h.tokens for h in beam_search(chunk, params, cfg, stats=stats))
    return out


def strip_eos(tokens: Sequence[int]) -> list[int]:
    tokens = list(tokens)
    return tokens[:-1] if tokens and tokens[-1] == EOS_ID else tokens
