#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Decoding throughput of encoder/decoder depth allocations at a fixed total depth.

Protocol: random weights, one fixed batch of random sources, forced-length
beam search (no early [EOS]), one untimed warmup and at least three timed
repetitions per config with ``perf_counter``. The median repetition is
reported next to every sample. Speedups are relative to the balanced config.
Native thread pools are capped at one thread while a config is timed.
"""

from __future__ import annotations

import contextlib
import csv
import logging
import os
import time
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from cpt.decoding import DecodeStats, generate
from cpt.exceptions import BenchError, ConfigError, PathError
from cpt.models import build
from cpt.models.config import BenchWorkload, GenerationConfig, ModelConfig
from cpt.models.reports import ThroughputReport
from cpt.network import CPTParams
from cpt.vocab import NUM_SPECIAL

log = logging.getLogger("cpt")

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

# shortest timed repetition, in multiples of the clock resolution
MIN_TICKS = 1000


def check_single_threaded(environ=None):
    environ = os.environ if environ is None else environ
    for var in THREAD_VARS:
        value = environ.get(var)
        if value is None:
            continue
        try:
            threads = int(value)
        except ValueError:
            raise BenchError(f"{var}={value!r} is not a thread count")
        if threads > 1:
            raise BenchError(f"{var}={threads}; the benchmark times a single worker, set it to 1")


@contextlib.contextmanager
def single_threaded():
    """Cap every native thread pool (BLAS, OpenMP) at one thread inside the block."""
    check_single_threaded()
    with threadpool_limits(limits=1):
        busy = [p for p in threadpool_info() if p.get("num_threads", 1) > 1]
        if busy:
            raise BenchError(f"thread pools still run in parallel: {[p.get('internal_api') for p in busy]}")
        yield


def bench_configs(configs: Sequence[tuple[int, int]], base: ModelConfig) -> list[ModelConfig]:
    """One ModelConfig per (encoder layers, decoder layers), sharing everything else with ``base``."""
    if not configs:
        raise ConfigError("no configs to benchmark")
    depths = {enc + dec for enc, dec in configs}
    if len(depths) > 1:
        raise ConfigError(f"configs differ in total depth {sorted(depths)}")
    return [
        build(ModelConfig, **{**base.model_dump(), "layers_enc": enc, "layers_udec": dec, "layers_gdec": dec})
        for enc, dec in configs
    ]


def reference_index(configs: Sequence[tuple[int, int]]) -> int:
    """The balanced config (enc == dec) if present, else the one with the deepest decoder."""
    for i, (enc, dec) in enumerate(configs):
        if enc == dec:
            return i
    return max(range(len(configs)), key=lambda i: configs[i][1])


def bench_sources(workload: BenchWorkload, batch: int, vocab_size: int) -> list[list[int]]:
    rng = np.random.default_rng(workload.seed)
    return rng.integers(NUM_SPECIAL, vocab_size, size=(batch, workload.src_len)).tolist()


def _time_config(params, sources, gen_cfg, workload, timer) -> tuple[list[float], DecodeStats]:
    for _ in range(workload.warmup):
        generate(sources, params, gen_cfg)
    samples, stats = [], None
    for _ in range(workload.repetitions):
        rep = DecodeStats()
        start = timer()
        generate(sources, params, gen_cfg, stats=rep)
        samples.append(timer() - start)
        if stats is not None and rep != stats:
            raise BenchError(f"repetitions of one config did different work: {stats} vs {rep}")
        stats = rep
    return samples, stats


def throughput_bench(
    configs: Sequence[tuple[int, int]],
    gen_cfg: GenerationConfig,
    workload: BenchWorkload,
    base: ModelConfig,
    label: str = "",
    timer: Callable[[], float] = time.perf_counter,
    resolution: Optional[float] = None,
) -> list[ThroughputReport]:
    check_single_threaded()
    models = bench_configs(configs, base)
    if workload.src_len > base.max_positions or workload.new_tokens > base.max_positions:
        raise ConfigError(f"workload {workload} does not fit max_positions={base.max_positions}")
    gen_cfg = gen_cfg.model_copy(update={"force_length": True, "max_new_tokens": workload.new_tokens})
    sources = bench_sources(workload, gen_cfg.batch_size, base.vocab_size)
    if resolution is None:
        resolution = time.get_clock_info("perf_counter").resolution

    measured = []
    for (enc, dec), config in zip(configs, models):
        params = CPTParams.initialize(config, np.random.default_rng(workload.seed))
        with single_threaded():
            samples, stats = _time_config(params, sources, gen_cfg, workload, timer)
        if min(samples) < MIN_TICKS * resolution:
            raise BenchError(
                f"{enc}+{dec} ran in {min(samples):.3g}s, too close to the clock resolution {resolution:.3g}s; "
                f"enlarge the workload"
            )
        log.info(f"bench {label}{enc}+{dec}: median {np.median(samples):.4f}s over {len(samples)} reps")
        measured.append((enc, dec, samples, stats))

    first = measured[0][3]
    for enc, dec, _, stats in measured[1:]:
        if stats != first:
            raise BenchError(f"unfair comparison: {enc}+{dec} did {stats}, {configs[0]} did {first}")

    reports = [
        ThroughputReport.measured(
            label=f"{label}{enc}+{dec}",
            enc_layers=enc,
            dec_layers=dec,
            beam=gen_cfg.beam_size,
            batch=gen_cfg.batch_size,
            tokens=stats.tokens_generated,
            seconds=float(np.median(samples)),
            samples=samples,
        )
        for enc, dec, samples, stats in measured
    ]
    reference = reports[reference_index(configs)].tok_per_s
    return [r.model_copy(update={"speedup": r.tok_per_s / reference}) for r in reports]


############### reports ###############


COLUMNS = list(ThroughputReport.model_fields)


def write_reports(path, reports: Sequence[ThroughputReport]):
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(COLUMNS)
        writer.writerows(r.csv_values() for r in reports)


def read_reports(path) -> list[ThroughputReport]:
    if not os.path.isfile(path):
        raise PathError(f"bench report {path}")
    with open(path, newline="") as f:
        return [ThroughputReport(**row) for row in csv.DictReader(f)]


def render_chart(reports: Sequence[ThroughputReport], path):
    """Grouped bars of tokens/second: one group per workload label prefix, one bar per config."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    groups: dict[str, dict[str, float]] = {}
    for r in reports:
        group, _, config = r.label.rpartition("/")
        groups.setdefault(group or "workload", {})[config] = r.tok_per_s
    configs = list(dict.fromkeys(c for g in groups.values() for c in g))
    width = 0.8 / len(configs)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = np.arange(len(groups))
    for i, config in enumerate(configs):
        heights = [g.get(config, 0.0) for g in groups.values()]
        ax.bar(x + i * width - 0.4 + width / 2, heights, width, label=config)
    ax.set_xticks(x, list(groups))
    ax.set_ylabel("tokens / second")
    ax.legend(title="enc+dec")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
