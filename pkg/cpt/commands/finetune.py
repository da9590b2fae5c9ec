#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence

import click

from cpt.checkpoint import load_checkpoint, save_checkpoint, write_container
from cpt.commands import exits, load_vocabulary
from cpt.exceptions import ConfigError
from cpt.models import build, format_key_values
from cpt.models.config import LEGAL_MODES, FineTuneMode, PromptSpec, ScheduleConfig, TaskKind, TaskSpec
from cpt.tasks import TaskData, load_records, split_records, synthetic_task
from cpt.training import Trainer, evaluate

log = logging.getLogger("cpt")

PROMPTED = (FineTuneMode.u_prompt, FineTuneMode.g_prompt)


def parse_verbalizers(items: Sequence[str]) -> dict[str, list[str]]:
    """``label=tok tok ...`` entries into a verbalizer map."""
    verbalizers = {}
    for item in items:
        label, sep, words = item.partition("=")
        if not sep or not label.strip():
            raise ConfigError(f"verbalizer {item!r} is not label=tokens")
        verbalizers[label.strip()] = words.split()
    return verbalizers


def load_task_data(kind: TaskKind, vocab, seed: int, dataset=None, held_out: float = 0.2, **synthetic) -> TaskData:
    if dataset is None:
        return synthetic_task(kind, vocab, seed, **synthetic)
    train, test = split_records(load_records(dataset, kind), held_out, seed)
    data = TaskData(kind, train, test)
    if kind == TaskKind.classify:
        data.labels = sorted({r.label for r in train + test})
    elif kind == TaskKind.seqlabel:
        data.tags = sorted({t for r in train + test for t in r.tags})
    return data


def cmd_finetune(
    checkpoint,
    kind: str,
    mode: str,
    seed: int,
    schedule: ScheduleConfig,
    batch_size: int = 16,
    dataset=None,
    held_out: float = 0.2,
    synthetic: Optional[dict] = None,
    labels: Sequence[str] = (),
    tags: Sequence[str] = (),
    prompt: Optional[dict] = None,
    max_span: int = 16,
    g_decoder_bos: bool = False,
    vocab_file=None,
    output=None,
    quiet: bool = False,
) -> dict[str, float]:
    """Fine-tune a pre-trained checkpoint on one task and evaluate on its held-out split."""
    kind, mode = TaskKind(kind), FineTuneMode(mode)
    if mode not in LEGAL_MODES[kind]:
        raise ConfigError(f"mode {mode.value} is not available for task kind {kind.value}")

    params, _, _ = load_checkpoint(checkpoint)
    vocab = load_vocabulary(vocab_file, params.config.vocab_size)
    data = load_task_data(kind, vocab, seed, dataset, held_out, **(synthetic or {}))

    prompt_spec = None
    if mode in PROMPTED:
        prompt = dict(prompt or {})
        if prompt.get("verbalizers"):
            prompt_spec = build(PromptSpec, **prompt)
        elif data.prompt is not None:
            prompt.pop("verbalizers", None)
            prompt = {k: v for k, v in prompt.items() if v}
            prompt_spec = data.prompt.model_copy(update=prompt)
        else:
            raise ConfigError(f"mode {mode.value} needs --verbalizer entries")
    task = build(
        TaskSpec,
        kind=kind,
        mode=mode,
        labels=list(labels) or data.labels,
        tags=list(tags) or data.tags,
        prompt=prompt_spec,
        dataset=dataset,
        max_span=max_span,
        g_decoder_bos=g_decoder_bos,
    )

    trainer = Trainer(params, vocab, seed, quiet=quiet)
    heads, compiled, losses = trainer.finetune(task, data.train, schedule.total_steps, batch_size, schedule)
    log.info(f"fine-tuning loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    metrics = evaluate(task, data.held_out, params, heads, vocab, compiled)

    if output is not None:
        output = Path(output)
        save_checkpoint(output / "finetuned.ckpt", params, run={"seed": seed, "kind": kind.value, "mode": mode.value})
        if heads.arrays:
            write_container(output / "heads.arr", {name: t.values for name, t in heads.arrays.items()})
        (output / "eval.txt").write_text(format_key_values(metrics), encoding="utf-8")
    return metrics


@click.command("finetune")
@click.option("--checkpoint", type=click.Path(), required=True, help="Pre-trained checkpoint.")
@click.option("--kind", type=click.Choice([k.value for k in TaskKind]), required=True)
@click.option("--mode", type=click.Choice([m.value for m in FineTuneMode]), required=True)
@click.option("--seed", type=int, required=True)
@click.option("--steps", type=int, default=200, show_default=True)
@click.option("--warmup", type=int, default=10, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--dataset", type=click.Path(), default=None, help="JSON-lines records; default is a synthetic task.")
@click.option("--held-out", type=float, default=0.2, show_default=True)
@click.option("--synthetic-train", type=int, default=256, show_default=True)
@click.option("--synthetic-held-out", type=int, default=64, show_default=True)
@click.option("--gen-task", type=click.Choice(["copy", "reverse"]), default="copy", show_default=True)
@click.option("--label", "labels", multiple=True)
@click.option("--tag", "tags", multiple=True)
@click.option("--verbalizer", "verbalizers", multiple=True, help="label=tok [tok ...]")
@click.option("--prompt-prefix", default="", help="Space-separated template tokens before the label slot.")
@click.option("--prompt-suffix", default="", help="Space-separated template tokens after the label slot.")
@click.option("--reduce", type=click.Choice(["arithmetic", "geometric"]), default=None)
@click.option("--pick", type=click.Choice(["lowest", "highest"]), default=None)
@click.option("--max-span", type=int, default=16, show_default=True)
@click.option("--g-decoder-bos", is_flag=True)
@click.option("--vocab", "vocab_file", type=click.Path(), default=None)
@click.option("--output", type=click.Path(), default=None, help="Directory for the tuned checkpoint and eval report.")
@click.option("--quiet", is_flag=True)
@exits
def finetune_command(steps, warmup, lr, synthetic_train, synthetic_held_out, gen_task, verbalizers, prompt_prefix, prompt_suffix, reduce, pick, **options):
    """Fine-tune a checkpoint (classify, seqlabel, mrc, gen) and print held-out metrics."""
    schedule = build(ScheduleConfig, peak_lr=lr, warmup_steps=warmup, total_steps=steps)
    synthetic = {"n_train": synthetic_train, "n_held_out": synthetic_held_out}
    if options["kind"] == TaskKind.gen.value:
        synthetic["task"] = gen_task
    prompt = {
        "prefix": prompt_prefix.split(),
        "suffix": prompt_suffix.split(),
        "verbalizers": parse_verbalizers(verbalizers),
        "u_prompt_reduce": reduce,
        "g_prompt_pick": pick,
    }
    prompt = {k: v for k, v in prompt.items() if v is not None}
    metrics = cmd_finetune(schedule=schedule, synthetic=synthetic, prompt=prompt, **options)
    click.echo(format_key_values(metrics), nl=False)
