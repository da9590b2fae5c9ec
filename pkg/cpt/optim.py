#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Adam with decoupled weight decay and a warmup-then-linear-decay schedule.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from cpt.exceptions import ConfigError, NumericError
from cpt.tensor import Tensor

log = logging.getLogger("cpt")

NO_DECAY_SUFFIXES = (".bias", ".gain")


@dataclass
class AdamState:
    peak_lr: float
    warmup_steps: int
    total_steps: int
    beta1: float = 0.9
    beta2: float = 0.98
    weight_decay: float = 0.01
    eps: float = 1e-8
    step: int = 0
    no_decay: tuple[str, ...] = NO_DECAY_SUFFIXES
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(
                f"warmup_steps={self.warmup_steps} must be within [0, total_steps={self.total_steps}]"
            )
        if self.total_steps <= 0:
            raise ConfigError(f"total_steps must be positive, got {self.total_steps}")
        if self.step < 0:
            raise ConfigError(f"step must be >= 0, got {self.step}")

    @classmethod
    def from_schedule(cls, schedule) -> AdamState:
        return cls(
            peak_lr=schedule.peak_lr,
            warmup_steps=schedule.warmup_steps,
            total_steps=schedule.total_steps,
            beta1=schedule.beta1,
            beta2=schedule.beta2,
            weight_decay=schedule.weight_decay,
            eps=schedule.adam_eps,
        )

    def decays(self, name: str) -> bool:
        return not name.endswith(self.no_decay)


def lr_at_step(state: AdamState, step: int | None = None) -> float:
    """Linear warmup to ``peak_lr`` at ``warmup_steps``, then linear decay to 0 at ``total_steps``."""
    step = state.step if step is None else step
    if state.warmup_steps > 0 and step <= state.warmup_steps:
        return state.peak_lr * step / state.warmup_steps
    remaining = state.total_steps - step
    span = state.total_steps - state.warmup_steps
    if span <= 0:
        return 0.0
    return max(0.0, state.peak_lr * remaining / span)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> float:
    """
    Update ``params`` in place from ``grads`` and return the learning rate used.

    Every gradient is checked before anything is touched, so a NaN leaves both
    the parameters and the state exactly as they were.
    """
    for name, grad in grads.items():
        if name not in params:
            raise ConfigError(f"gradient for unknown parameter {name}")
        if grad.shape != params[name].shape:
            raise ConfigError(f"gradient for {name} has shape {grad.shape}, expected {params[name].shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient in parameter {name}")

    state.step += 1
    lr = lr_at_step(state)
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for name, grad in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        update = (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        if state.weight_decay and state.decays(name):
            update = update + state.weight_decay * p.values
        p.values -= lr * update
    log.debug(f"adam step {state.step} lr={lr:.3g}")
    return lr
