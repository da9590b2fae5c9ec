#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Configuration schemas: model shape, corruption, schedule, runs, tasks, decoding.
"""

from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from cpt.exceptions import ConfigError
from cpt.models import build

############### Model ###############


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    vocab_size: int = Field(gt=0, description="Number of token ids, specials included.")
    hidden: int = Field(gt=0, description="Hidden size H.")
    heads: int = Field(gt=0, description="Attention heads A; H must be divisible by A.")
    layers_enc: int = Field(ge=1, description="Shared encoder (S-Enc) depth.")
    layers_udec: int = Field(ge=1, description="Understanding decoder (U-Dec) depth.")
    layers_gdec: int = Field(ge=1, description="Generation decoder (G-Dec) depth.")
    max_positions: int = Field(gt=0, description="Learned absolute positions.")
    ffn_mult: int = Field(4, gt=0, description="FFN inner size as a multiple of H.")
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    norm_eps: float = Field(1e-5, gt=0.0)
    init_std: float = Field(0.02, gt=0.0)

    @model_validator(mode="after")
    def _check_shape(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden={self.hidden} is not divisible by heads={self.heads}")
        if self.layers_enc + self.layers_udec != self.layers_enc + self.layers_gdec:
            raise ValueError(
                f"activated depth differs between paths: enc+udec={self.layers_enc + self.layers_udec}, "
                f"enc+gdec={self.layers_enc + self.layers_gdec}"
            )
        return self


DESK_VOCAB = 256 + 7

PRESETS = {
    "tiny": dict(vocab_size=39, hidden=16, heads=2, layers_enc=2, layers_udec=1, layers_gdec=1, max_positions=64),
    "desk": dict(vocab_size=DESK_VOCAB, hidden=64, heads=4, layers_enc=4, layers_udec=1, layers_gdec=1, max_positions=128),
    "base": dict(vocab_size=21128, hidden=768, heads=12, layers_enc=10, layers_udec=2, layers_gdec=2, max_positions=512),
    "large": dict(vocab_size=21128, hidden=1024, heads=16, layers_enc=20, layers_udec=4, layers_gdec=4, max_positions=512),
    # balanced references of the same activated depth
    "bart-base": dict(vocab_size=21128, hidden=768, heads=12, layers_enc=6, layers_udec=6, layers_gdec=6, max_positions=512),
    "bart-large": dict(vocab_size=21128, hidden=1024, heads=16, layers_enc=12, layers_udec=12, layers_gdec=12, max_positions=512),
}


def model_preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}, choose from {sorted(PRESETS)}")
    return build(ModelConfig, **{**PRESETS[name], **overrides})


############### Corruption ###############


class CorruptionConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    word_mask_rate: float = Field(0.15, ge=0.0, le=1.0, description="MLM whole-word selection rate.")
    mask_frac: float = Field(0.8, ge=0.0, le=1.0)
    random_frac: float = Field(0.1, ge=0.0, le=1.0)
    keep_frac: float = Field(0.1, ge=0.0, le=1.0)
    replacement_granularity: Literal["token", "word"] = Field(
        "token", description="Draw the 80/10/10 action per token of a selected word, or once per word."
    )
    dae_infill_rate: float = Field(0.15, ge=0.0, le=1.0, description="DAE token-infilling word rate.")
    permute_sentences: bool = True
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_fractions(self):
        if abs(self.mask_frac + self.random_frac + self.keep_frac - 1.0) > 1e-9:
            raise ValueError("mask_frac + random_frac + keep_frac must equal 1")
        return self


############### Schedule ###############


class ScheduleConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    peak_lr: float = Field(3e-4, gt=0.0)
    warmup_steps: int = Field(100, ge=0)
    total_steps: int = Field(2000, gt=0)
    weight_decay: float = Field(0.01, ge=0.0)
    beta1: float = Field(0.9, gt=0.0, lt=1.0)
    beta2: float = Field(0.98, gt=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)

    @model_validator(mode="after")
    def _check_warmup(self):
        if self.warmup_steps > self.total_steps:
            raise ValueError(f"warmup_steps={self.warmup_steps} exceeds total_steps={self.total_steps}")
        return self


############### Runs ###############


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int = Field(ge=0, description="Mandatory; every random stream derives from it.")
    preset: str = "desk"
    model: ModelConfig
    corruption: CorruptionConfig = CorruptionConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    task: Literal["joint", "mlm-only", "dae-only"] = "joint"
    batch_size: int = Field(8, gt=0)
    max_len: int = Field(64, gt=2, description="Longest MLM/DAE sequence fed to the model.")
    corpus: Optional[Path] = None
    synthetic_docs: int = Field(32, gt=0, description="Bundled corpus size when no corpus path is given.")
    vocab_file: Optional[Path] = None
    checkpoint_dir: Path = Path("checkpoints")
    metrics_file: Path = Path("metrics.csv")
    checkpoint_every: int = Field(0, ge=0, description="0 keeps only the final checkpoint.")

    @model_validator(mode="after")
    def _check_len(self):
        if self.max_len > self.model.max_positions:
            raise ValueError(f"max_len={self.max_len} exceeds max_positions={self.model.max_positions}")
        return self


############### Fine-tuning ###############


class TaskKind(str, Enum):
    classify = "classify"
    seqlabel = "seqlabel"
    mrc = "mrc"
    gen = "gen"


class FineTuneMode(str, Enum):
    u = "u"
    g = "g"
    ug = "ug"
    u_prompt = "u_prompt"
    g_prompt = "g_prompt"


LEGAL_MODES = {
    TaskKind.classify: {FineTuneMode.u, FineTuneMode.g, FineTuneMode.ug, FineTuneMode.u_prompt, FineTuneMode.g_prompt},
    TaskKind.seqlabel: {FineTuneMode.u, FineTuneMode.g, FineTuneMode.ug},
    TaskKind.mrc: {FineTuneMode.u, FineTuneMode.g, FineTuneMode.ug},
    TaskKind.gen: {FineTuneMode.g},
}


class PromptSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    prefix: list[str] = Field(default_factory=list, description="Template tokens before the label slot.")
    suffix: list[str] = Field(default_factory=list, description="Template tokens after the label slot.")
    verbalizers: dict[str, list[str]] = Field(description="Label -> word tokens (1 to 7).")
    u_prompt_reduce: Literal["arithmetic", "geometric"] = "arithmetic"
    g_prompt_pick: Literal["lowest", "highest"] = Field(
        "lowest", description="Perplexity comparator for g_prompt; lowest matches the likelihood objective."
    )

    @model_validator(mode="after")
    def _check_words(self):
        if not self.verbalizers:
            raise ValueError("at least one verbalizer entry is required")
        for label, word in self.verbalizers.items():
            if not 1 <= len(word) <= 7:
                raise ValueError(f"verbalizer for {label!r} must have 1 to 7 tokens, got {len(word)}")
        return self

    @property
    def mask_span(self) -> int:
        return max(len(word) for word in self.verbalizers.values())


class TaskSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: TaskKind
    mode: FineTuneMode
    labels: list[str] = Field(default_factory=list)
    tags: list[str] = Field(default_factory=list)
    prompt: Optional[PromptSpec] = None
    dataset: Optional[Path] = None
    max_span: int = Field(16, ge=1)
    g_decoder_bos: bool = Field(False, description="Prefix [BOS] to the G-Dec input in g/ug modes.")

    @model_validator(mode="after")
    def _check_mode(self):
        if self.mode not in LEGAL_MODES[self.kind]:
            raise ValueError(f"mode {self.mode.value} is not available for task kind {self.kind.value}")
        prompted = self.mode in (FineTuneMode.u_prompt, FineTuneMode.g_prompt)
        if prompted and self.prompt is None:
            raise ValueError(f"mode {self.mode.value} needs a prompt")
        if not prompted and self.prompt is not None:
            raise ValueError(f"mode {self.mode.value} takes no prompt")
        if prompted:
            missing = [label for label in self.labels if label not in self.prompt.verbalizers]
            if missing:
                raise ValueError(f"no verbalizer for label(s) {missing}")
        return self


############### Decoding ###############


class GenerationConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    beam_size: int = Field(4, ge=1)
    batch_size: int = Field(8, ge=1)
    max_new_tokens: int = Field(64, ge=1)
    length_penalty: float = 1.0
    force_length: bool = Field(False, description="Ignore [EOS] and always emit max_new_tokens.")


class BenchWorkload(BaseModel):
    model_config = ConfigDict(frozen=True)

    src_len: int = Field(32, gt=0)
    new_tokens: int = Field(64, gt=0)
    repetitions: int = Field(3, ge=3)
    warmup: int = Field(1, ge=1)
    seed: int = 0


WORKLOADS = {
    "short": BenchWorkload(src_len=24, new_tokens=16),
    "medium": BenchWorkload(src_len=64, new_tokens=32),
    "long": BenchWorkload(src_len=120, new_tokens=64),
}
