#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from __future__ import annotations

import logging
from pathlib import Path

import click

from cpt.checkpoint import load_checkpoint
from cpt.commands import exits, load_vocabulary
from cpt.decoding import generate, strip_eos
from cpt.exceptions import PathError, SequenceTooLongError
from cpt.models import build
from cpt.models.config import GenerationConfig

log = logging.getLogger("cpt")


def cmd_generate(checkpoint, input_file, output_file, gen_cfg: GenerationConfig, greedy: bool = False, vocab_file=None) -> int:
    """
    One output line per input line. Lines are whitespace-separated tokens;
    a token missing from the vocabulary aborts before any decoding.
    """
    input_file = Path(input_file)
    if not input_file.is_file():
        raise PathError(f"input file {input_file}")
    params, _, _ = load_checkpoint(checkpoint)
    vocab = load_vocabulary(vocab_file, params.config.vocab_size)
    lines = input_file.read_text(encoding="utf-8").splitlines()
    rows = [vocab.strict_lookup(line.split()) for line in lines]
    for row in rows:
        if len(row) > params.config.max_positions:
            raise SequenceTooLongError(len(row), params.config.max_positions)

    outputs = generate(rows, params, gen_cfg, greedy=greedy) if rows else []
    text = "".join(" ".join(vocab.decode(strip_eos(o))) + "\n" for o in outputs)
    Path(output_file).write_text(text, encoding="utf-8")
    log.info(f"wrote {len(outputs)} generated line(s) to {output_file}")
    return len(outputs)


@click.command("generate")
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--input", "input_file", type=click.Path(), required=True, help="One source per line.")
@click.option("--output", "output_file", type=click.Path(), required=True)
@click.option("--beam", "beam_size", type=int, default=4, show_default=True)
@click.option("--batch-size", type=int, default=8, show_default=True)
@click.option("--max-new-tokens", type=int, default=64, show_default=True)
@click.option("--length-penalty", type=float, default=1.0, show_default=True)
@click.option("--greedy", is_flag=True, help="Argmax decoding instead of beam search.")
@click.option("--vocab", "vocab_file", type=click.Path(), default=None)
@exits
def generate_command(checkpoint, input_file, output_file, greedy, vocab_file, **gen):
    """Decode every input line with the G-Dec path."""
    cmd_generate(checkpoint, input_file, output_file, build(GenerationConfig, **gen), greedy, vocab_file)
