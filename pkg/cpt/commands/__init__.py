#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Shared plumbing for the subcommands: error-to-exit-code mapping, run
configuration resolution (flags > config file > preset) and common options.
"""

from __future__ import annotations

import logging
import os
from functools import wraps
from pathlib import Path

import click

import cpt.exceptions as ce
from cpt.models import build, parse_key_values
from cpt.models.config import CorruptionConfig, ModelConfig, RunConfig, ScheduleConfig, model_preset
from cpt.vocab import Vocabulary

log = logging.getLogger("cpt")


def run_command(function, *args, **kwargs) -> int:
    """Call a command body and return the process exit code."""
    try:
        function(*args, **kwargs)
    except ce.CptError as e:
        log.error(e)
        return e.exit_code
    except Exception as e:
        log.error(f"{type(e).__name__}: {e}")
        return 1
    return 0


def exits(body):
    """Run a click callback through ``run_command`` and exit with its code."""

    @wraps(body)
    def decorated(*args, **kwargs):
        code = run_command(body, *args, **kwargs)
        if code:
            click.get_current_context().exit(code)

    return decorated


############### configuration ###############

MODEL_KEYS = set(ModelConfig.model_fields)
CORRUPTION_KEYS = set(CorruptionConfig.model_fields) - {"seed"}
SCHEDULE_KEYS = set(ScheduleConfig.model_fields)
RUN_KEYS = set(RunConfig.model_fields) - {"model", "corruption", "schedule"}


def read_config_file(config_file) -> dict[str, str]:
    """key=value pairs of ``config_file``, or of ``$CPT_CONFIG`` when none is given."""
    config_file = config_file or os.getenv("CPT_CONFIG")
    if not config_file:
        return {}
    path = Path(config_file)
    if not path.is_file():
        raise ce.PathError(f"config file {path}")
    log.info(f"reading config file {path}")
    return parse_key_values(path.read_text(encoding="utf-8"), str(path))


def resolve_run_config(config_file=None, **flags) -> RunConfig:
    values = read_config_file(config_file)
    values.update({k: v for k, v in flags.items() if v is not None})
    unknown = sorted(set(values) - MODEL_KEYS - CORRUPTION_KEYS - SCHEDULE_KEYS - RUN_KEYS)
    if unknown:
        raise ce.ConfigError(f"unknown key(s) {unknown}")
    if "seed" not in values:
        raise ce.ConfigError("seed is mandatory (--seed or seed= in the config file)")

    def pick(keys):
        return {k: v for k, v in values.items() if k in keys}

    run = pick(RUN_KEYS)
    model = model_preset(run.get("preset", "desk"), **pick(MODEL_KEYS))
    corruption = build(CorruptionConfig, seed=run["seed"], **pick(CORRUPTION_KEYS))
    schedule = build(ScheduleConfig, **pick(SCHEDULE_KEYS))
    config = build(RunConfig, model=model, corruption=corruption, schedule=schedule, **run)

    for name in ("corpus", "vocab_file"):
        path = getattr(config, name)
        if path is not None and not path.is_file():
            raise ce.PathError(f"{name} {path}")
    return config


def load_vocabulary(vocab_file, vocab_size: int) -> Vocabulary:
    vocab = Vocabulary.from_file(vocab_file) if vocab_file else Vocabulary.for_size(vocab_size)
    if len(vocab) != vocab_size:
        raise ce.VocabularyMismatchError(f"vocabulary has {len(vocab)} tokens, the model expects {vocab_size}")
    return vocab


############### options ###############


def run_options(f):
    """Options shared by commands that build a RunConfig."""
    options = [
        click.option("--config", "config_file", type=click.Path(), default=None, help="key=value config file."),
        click.option("--seed", type=int, default=None, help="Mandatory unless set in the config file."),
        click.option("--preset", default=None, help="Model preset: tiny, desk, base, large, bart-base, bart-large."),
        click.option("--steps", "total_steps", type=int, default=None),
        click.option("--warmup", "warmup_steps", type=int, default=None),
        click.option("--lr", "peak_lr", type=float, default=None),
        click.option("--batch-size", type=int, default=None),
        click.option("--max-len", type=int, default=None),
        click.option("--vocab", "vocab_file", type=click.Path(), default=None, help="One token per line."),
        click.option("--quiet", is_flag=True, help="No progress bar."),
    ]
    for option in reversed(options):
        f = option(f)
    return f
