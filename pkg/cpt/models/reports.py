#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Rows of the metrics stream and of the benchmark report.
"""

from __future__ import annotations

from pydantic import BaseModel, Field, field_validator, model_validator

############### Metrics ###############


class MetricsRow(BaseModel):
    step: int = Field(ge=0)
    task: str = Field(description="mlm, dae or a fine-tuning task kind.")
    loss: float
    lr: float
    wall_ms: float = Field(description="Monotonic milliseconds since the run started.")

    def csv_values(self) -> list[str]:
        return [str(self.step), self.task, repr(self.loss), repr(self.lr), f"{self.wall_ms:.3f}"]


############### Benchmark ###############


class ThroughputReport(BaseModel):
    label: str
    enc_layers: int = Field(ge=0)
    dec_layers: int = Field(ge=1)
    beam: int = Field(ge=1)
    batch: int = Field(ge=1)
    tokens: int = Field(gt=0, description="Tokens generated per repetition.")
    seconds: float = Field(gt=0.0, description="Median wall seconds of the timed repetitions.")
    tok_per_s: float
    speedup: float = Field(description="tok_per_s relative to the reference config.")
    samples: list[float] = Field(default_factory=list, description="Wall seconds of every timed repetition.")

    @field_validator("samples", mode="before")
    @classmethod
    def _split_samples(cls, value):
        if isinstance(value, str):
            return [float(s) for s in value.split(";") if s]
        return value

    @model_validator(mode="after")
    def _check_rate(self):
        if abs(self.tok_per_s - self.tokens / self.seconds) > 1e-9 * max(1.0, self.tok_per_s):
            raise ValueError("tok_per_s must equal tokens / seconds")
        return self

    @classmethod
    def measured(cls, label, enc_layers, dec_layers, beam, batch, tokens, seconds, samples, speedup=1.0):
        return cls(
            label=label,
            enc_layers=enc_layers,
            dec_layers=dec_layers,
            beam=beam,
            batch=batch,
            tokens=tokens,
            seconds=seconds,
            tok_per_s=tokens / seconds,
            speedup=speedup,
            samples=list(samples),
        )

    def csv_values(self) -> list[str]:
        return [
            self.label,
            str(self.enc_layers),
            str(self.dec_layers),
            str(self.beam),
            str(self.batch),
            str(self.tokens),
            repr(self.seconds),
            repr(self.tok_per_s),
            repr(self.speedup),
            ";".join(repr(s) for s in self.samples),
        ]
