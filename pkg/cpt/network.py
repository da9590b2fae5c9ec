#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
The unbalanced encoder-decoder: a shared encoder (S-Enc) feeding a
bidirectional understanding decoder (U-Dec) and a causal generation
decoder (G-Dec).

One token-embedding matrix serves the encoder input, the G-Dec input, the
MLM head and the LM head. Position embeddings are shared between S-Enc and
G-Dec; U-Dec consumes the encoder states as they are.
"""

from __future__ import annotations

import logging
from typing import Literal

import numpy as np

from cpt.blocks import AttentionMask, BlockWeights, NormWeights, decoder_layer, embed, encoder_layer, init_array
from cpt.exceptions import ConfigError, SequenceTooLongError, ShapeError
from cpt.models.config import ModelConfig
from cpt.tensor import Tensor

log = logging.getLogger("cpt")

Part = Literal["enc", "udec", "gdec"]

# tied views of the token embedding matrix
ALIASES = {
    "mlm_head.weight": "token_embeddings",
    "lm_head.weight": "token_embeddings",
    "gdec.embed_tokens": "token_embeddings",
}


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every canonical array name and its shape, in registration order. Tied arrays appear once."""
    V, H, P = config.vocab_size, config.hidden, config.max_positions
    shapes = {
        "token_embeddings": (V, H),
        "position_embeddings": (P, H),
        "enc_embed_norm.gain": (H,),
        "enc_embed_norm.bias": (H,),
        "gdec_embed_norm.gain": (H,),
        "gdec_embed_norm.bias": (H,),
    }
    for i in range(config.layers_enc):
        shapes.update(BlockWeights.shapes(H, config.ffn_mult, cross=False, prefix=f"enc.{i}"))
    for i in range(config.layers_udec):
        shapes.update(BlockWeights.shapes(H, config.ffn_mult, cross=False, prefix=f"udec.{i}"))
    for i in range(config.layers_gdec):
        shapes.update(BlockWeights.shapes(H, config.ffn_mult, cross=True, prefix=f"gdec.{i}"))
    shapes["mlm_head.bias"] = (V,)
    shapes["lm_head.bias"] = (V,)
    return shapes


def part_of(name: str) -> Part:
    """Which sub-network owns a canonical array."""
    if name.startswith(("udec.", "mlm_head.")):
        return "udec"
    if name.startswith(("gdec.", "gdec_embed_norm.", "lm_head.")):
        return "gdec"
    return "enc"


class CPTParams:
    """All named weight arrays of one model, plus structured views into them."""

    def __init__(self, config: ModelConfig, arrays: dict[str, Tensor]):
        expected = param_shapes(config)
        missing = sorted(set(expected) - set(arrays))
        if missing:
            raise ConfigError(f"parameters missing for {len(missing)} array(s), first {missing[0]}")
        unknown = sorted(set(arrays) - set(expected))
        if unknown:
            raise ConfigError(f"unexpected parameter {unknown[0]}")
        for name, shape in expected.items():
            if arrays[name].shape != shape:
                raise ConfigError(f"{name} has shape {arrays[name].shape}, expected {shape}")
        self.config = config
        self.arrays = {name: arrays[name] for name in expected}
        for name, t in self.arrays.items():
            t.name = name
            t.requires_grad = True
            if t.grad is None:
                t.zero_grad()

        A = config.heads
        self.enc_embed_norm = NormWeights.from_arrays(self.arrays, "enc_embed_norm")
        self.gdec_embed_norm = NormWeights.from_arrays(self.arrays, "gdec_embed_norm")
        self.enc_layers = [BlockWeights.from_arrays(self.arrays, f"enc.{i}", A, cross=False) for i in range(config.layers_enc)]
        self.udec_layers = [BlockWeights.from_arrays(self.arrays, f"udec.{i}", A, cross=False) for i in range(config.layers_udec)]
        self.gdec_layers = [BlockWeights.from_arrays(self.arrays, f"gdec.{i}", A, cross=True) for i in range(config.layers_gdec)]

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator) -> CPTParams:
        arrays = {
            name: Tensor.parameter(init_array(name, shape, rng, config.init_std), name=name)
            for name, shape in param_shapes(config).items()
        }
        return cls(config, arrays)

    def __getitem__(self, name: str) -> Tensor:
        return self.arrays[ALIASES.get(name, name)]

    def __contains__(self, name: str) -> bool:
        return ALIASES.get(name, name) in self.arrays

    @property
    def aliases(self) -> dict[str, str]:
        return dict(ALIASES)

    @property
    def token_embeddings(self) -> Tensor:
        return self.arrays["token_embeddings"]

    @property
    def position_embeddings(self) -> Tensor:
        return self.arrays["position_embeddings"]

    def named_arrays(self) -> dict[str, Tensor]:
        return dict(self.arrays)

    def grads(self) -> dict[str, np.ndarray]:
        return {name: t.grad for name, t in self.arrays.items()}

    def zero_grad(self):
        for t in self.arrays.values():
            t.zero_grad()

    def part_arrays(self, part: Part) -> dict[str, Tensor]:
        return {name: t for name, t in self.arrays.items() if part_of(name) == part}

    def randomize(self, part: Part, rng: np.random.Generator):
        """Overwrite every array of ``part`` in place with fresh random values."""
        for name, t in self.part_arrays(part).items():
            if name.endswith(".gain"):
                t.values[...] = 1.0 + rng.normal(0.0, 0.1, size=t.shape)
            else:
                t.values[...] = rng.normal(0.0, self.config.init_std, size=t.shape)
        log.debug(f"randomized {part} weights")

    def copy(self) -> CPTParams:
        return CPTParams(
            self.config,
            {name: Tensor.parameter(t.values.copy(), name=name) for name, t in self.arrays.items()},
        )

    def assign(self, values: dict[str, np.ndarray]):
        """Copy array values in place (checkpoint restore keeps the structured views valid)."""
        for name, v in values.items():
            target = self[name]
            if target.shape != v.shape:
                raise ConfigError(f"{name} has shape {v.shape}, expected {target.shape}")
            target.values[...] = v


############### forward paths ###############


def _as_batch(token_ids) -> np.ndarray:
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
    if ids.ndim != 2:
        raise ShapeError(f"token ids must be (batch, time), got {ids.shape}")
    return ids


def encode(token_ids, pad_mask, params: CPTParams, rng: np.random.Generator | None = None) -> Tensor:
    """S-Enc states ``(batch, time, H)``."""
    ids = _as_batch(token_ids)
    config = params.config
    if ids.shape[1] > config.max_positions:
        raise SequenceTooLongError(ids.shape[1], config.max_positions)
    x = embed(ids, 0, params.token_embeddings, params.position_embeddings, params.enc_embed_norm, config.norm_eps)
    for layer in params.enc_layers:
        x = encoder_layer(x, pad_mask, layer, config.norm_eps, config.dropout, rng)
    return x


def understand(enc_states: Tensor, pad_mask, params: CPTParams, rng: np.random.Generator | None = None) -> Tensor:
    """U-Dec: more full-attention layers on top of the encoder states."""
    config = params.config
    x = enc_states
    for layer in params.udec_layers:
        x = encoder_layer(x, pad_mask, layer, config.norm_eps, config.dropout, rng)
    return x


def generate_forward(
    dec_token_ids,
    enc_states: Tensor,
    enc_pad_mask,
    params: CPTParams,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """G-Dec states: causal self-attention plus cross-attention to ``enc_states``."""
    ids = _as_batch(dec_token_ids)
    config = params.config
    if ids.shape[1] > config.max_positions:
        raise SequenceTooLongError(ids.shape[1], config.max_positions)
    x = embed(ids, 0, params.token_embeddings, params.position_embeddings, params.gdec_embed_norm, config.norm_eps)
    causal = AttentionMask("causal")
    for layer in params.gdec_layers:
        x = decoder_layer(x, enc_states, causal, enc_pad_mask, layer, config.norm_eps, config.dropout, rng)
    return x


def mlm_logits(udec_states: Tensor, params: CPTParams) -> Tensor:
    return udec_states @ params["mlm_head.weight"].transpose((1, 0)) + params["mlm_head.bias"]


def lm_logits(gdec_states: Tensor, params: CPTParams) -> Tensor:
    return gdec_states @ params["lm_head.weight"].transpose((1, 0)) + params["lm_head.bias"]


############### accounting ###############


def count_params(config: ModelConfig) -> int:
    """Closed-form parameter count; tied arrays counted once."""
    V, H, P, m = config.vocab_size, config.hidden, config.max_positions, config.ffn_mult
    enc_block = (4 + 2 * m) * H * H + (9 + m) * H
    dec_block = (8 + 2 * m) * H * H + (15 + m) * H
    return (
        V * H
        + P * H
        + 4 * H
        + (config.layers_enc + config.layers_udec) * enc_block
        + config.layers_gdec * dec_block
        + 2 * V
    )


def enumerate_params(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for shape in param_shapes(config).values())


def activated_depth(config: ModelConfig, task_path: Literal["understanding", "generation"]) -> int:
    if task_path == "understanding":
        return config.layers_enc + config.layers_udec
    if task_path == "generation":
        return config.layers_enc + config.layers_gdec
    raise ConfigError(f"unknown task path {task_path!r}")
