#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from __future__ import annotations

import logging
from pathlib import Path

import click
import numpy as np

from cpt.commands import exits, load_vocabulary, resolve_run_config, run_options
from cpt.corruption import load_corpus, synthetic_corpus
from cpt.exceptions import DataError
from cpt.managers import CheckpointManager, MetricsWriter
from cpt.models.config import RunConfig
from cpt.network import CPTParams, count_params
from cpt.training import Trainer

log = logging.getLogger("cpt")


def cmd_pretrain(run: RunConfig, quiet: bool = False) -> Path:
    """Joint (or single-task) pre-training; returns the final checkpoint path."""
    vocab = load_vocabulary(run.vocab_file, run.model.vocab_size)
    if run.corpus is not None:
        docs = load_corpus(run.corpus, vocab)
    else:
        docs = synthetic_corpus(run.synthetic_docs, run.seed, vocab)
        log.info(f"using the bundled synthetic corpus ({len(docs)} documents)")
    if not docs:
        raise DataError(f"corpus {run.corpus} has no documents")

    params = CPTParams.initialize(run.model, np.random.default_rng(run.seed))
    log.info(f"model {run.preset}: {count_params(run.model):,} parameters")
    checkpoints = CheckpointManager(run.checkpoint_dir, run.checkpoint_every)
    trainer = Trainer(params, vocab, run.seed, MetricsWriter(run.metrics_file), checkpoints, quiet)
    trainer.pretrain(docs, run)
    latest = checkpoints.path_for(run.schedule.total_steps)
    log.info(f"pre-training done, final checkpoint {latest}, metrics in {run.metrics_file}")
    return latest


@click.command("pretrain")
@run_options
@click.option("--task", type=click.Choice(["joint", "mlm-only", "dae-only"]), default=None)
@click.option("--corpus", type=click.Path(), default=None, help="JSON-lines documents; default is the synthetic corpus.")
@click.option("--synthetic-docs", type=int, default=None)
@click.option("--checkpoint-dir", type=click.Path(), default=None)
@click.option("--checkpoint-every", type=int, default=None)
@click.option("--metrics", "metrics_file", type=click.Path(), default=None)
@exits
def pretrain_command(config_file, quiet, **flags):
    """Pre-train MLM (S-Enc + U-Dec) and DAE (S-Enc + G-Dec) jointly."""
    path = cmd_pretrain(resolve_run_config(config_file, **flags), quiet)
    click.echo(str(path))
