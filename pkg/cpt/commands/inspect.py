#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from __future__ import annotations

import click

from cpt.checkpoint import load_checkpoint
from cpt.commands import exits
from cpt.models import format_key_values
from cpt.network import activated_depth, count_params


def cmd_inspect(checkpoint) -> str:
    params, adam_state, run = load_checkpoint(checkpoint)
    config = params.config
    lines = ["[config]", format_key_values(config.model_dump()).rstrip("\n")]
    if run:
        lines += ["[run]", format_key_values(run).rstrip("\n")]
    if adam_state is not None:
        lines += ["[optimizer]", f"step={adam_state.step}", f"moments={len(adam_state.m)}"]
    lines.append("[arrays]")
    lines += [f"{name}\t{'x'.join(str(d) for d in t.shape)}" for name, t in params.named_arrays().items()]
    lines.append("[aliases]")
    lines += [f"{alias} -> {target}" for alias, target in params.aliases.items()]
    lines += [
        "[size]",
        f"parameters={count_params(config)}",
        f"understanding_depth={activated_depth(config, 'understanding')}",
        f"generation_depth={activated_depth(config, 'generation')}",
    ]
    return "\n".join(lines) + "\n"


@click.command("inspect-checkpoint")
@click.argument("checkpoint", type=click.Path())
@exits
def inspect_command(checkpoint):
    """Print the config, array shapes, aliases and parameter count of a checkpoint."""
    click.echo(cmd_inspect(checkpoint), nl=False)
