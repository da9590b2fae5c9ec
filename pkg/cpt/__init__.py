#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Command line definition: one click group with a subcommand per workflow.
"""

from __future__ import annotations

import logging
import os

import click

from cpt.commands.bench import bench_command
from cpt.commands.corrupt import corrupt_command
from cpt.commands.finetune import finetune_command
from cpt.commands.generate import generate_command
from cpt.commands.inspect import inspect_command
from cpt.commands.pretrain import pretrain_command

log = logging.getLogger("cpt")

commands = {
    "pretrain": pretrain_command,
    "finetune": finetune_command,
    "generate": generate_command,
    "bench": bench_command,
    "corrupt": corrupt_command,
    "inspect-checkpoint": inspect_command,
}


def create_cli(enabled=commands) -> click.Group:
    """
    Build the ``cpt`` group from the given subcommands.

    Parameters
    ----------
    enabled : dict
        name -> click command.

    Returns
    -------
    click.Group
    """

    @click.group(help="Unbalanced encoder/decoder pre-training, fine-tuning and benchmarking.")
    @click.version_option(package_name="cpt-desk")
    def cli():
        pass

    for name, command in enabled.items():
        cli.add_command(command, name)
    return cli


def main():
    logging.basicConfig(
        level=os.getenv("CPT_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    create_cli()()
