#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from __future__ import annotations

import logging

import click

from cpt.bench import render_chart, throughput_bench, write_reports
from cpt.commands import exits
from cpt.exceptions import ConfigError
from cpt.models import build
from cpt.models.config import WORKLOADS, BenchWorkload, GenerationConfig, model_preset
from cpt.models.reports import ThroughputReport

log = logging.getLogger("cpt")


def parse_configs(text: str) -> list[tuple[int, int]]:
    """``10+2,6+6`` into [(10, 2), (6, 6)]."""
    configs = []
    for item in text.split(","):
        enc, sep, dec = item.strip().partition("+")
        if not sep or not enc.isdigit() or not dec.isdigit():
            raise ConfigError(f"config {item!r} is not enc+dec")
        configs.append((int(enc), int(dec)))
    return configs


def cmd_bench(
    configs: list[tuple[int, int]],
    gen_cfg: GenerationConfig,
    workloads: dict[str, BenchWorkload],
    preset: str = "desk",
    output=None,
    chart=None,
    **model,
) -> list[ThroughputReport]:
    base = model_preset(preset, **model)
    reports = []
    for name, workload in workloads.items():
        prefix = f"{name}/" if len(workloads) > 1 else ""
        reports.extend(throughput_bench(configs, gen_cfg, workload, base, label=prefix))
    if output is not None:
        write_reports(output, reports)
        log.info(f"wrote {len(reports)} report row(s) to {output}")
    if chart is not None:
        render_chart(reports, chart)
    return reports


@click.command("bench")
@click.option("--configs", default="10+2,6+6", show_default=True, help="Comma-separated enc+dec layer splits.")
@click.option("--preset", default="desk", show_default=True, help="Shape (H, A, vocabulary) shared by every config.")
@click.option("--hidden", type=int, default=None)
@click.option("--heads", type=int, default=None)
@click.option("--beam", "beam_size", type=int, default=4, show_default=True)
@click.option("--batch-size", type=int, default=8, show_default=True)
@click.option("--workload", "workload_names", type=click.Choice(sorted(WORKLOADS)), multiple=True)
@click.option("--src-len", type=int, default=None, help="Custom workload source length.")
@click.option("--new-tokens", type=int, default=64, show_default=True, help="Custom workload forced length.")
@click.option("--reps", "repetitions", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", type=click.Path(), default=None, help="CSV report.")
@click.option("--chart", type=click.Path(), default=None, help="SVG grouped-bar chart.")
@exits
def bench_command(configs, preset, hidden, heads, beam_size, batch_size, workload_names, src_len, new_tokens, repetitions, seed, output, chart):
    """Decoding throughput of encoder/decoder splits at equal total depth."""
    if workload_names:
        workloads = {n: build(BenchWorkload, **{**WORKLOADS[n].model_dump(), "repetitions": repetitions, "seed": seed}) for n in workload_names}
    else:
        workloads = {
            "custom": build(BenchWorkload, src_len=src_len or 32, new_tokens=new_tokens, repetitions=repetitions, seed=seed)
        }
    model = {k: v for k, v in {"hidden": hidden, "heads": heads}.items() if v is not None}
    gen_cfg = build(GenerationConfig, beam_size=beam_size, batch_size=batch_size)
    reports = cmd_bench(parse_configs(configs), gen_cfg, workloads, preset, output, chart, **model)
    for r in reports:
        click.echo(f"{r.label}\ttok/s={r.tok_per_s:.1f}\tspeedup={r.speedup:.3f}")
