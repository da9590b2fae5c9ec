#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from __future__ import annotations

import logging
from typing import Optional, Sequence

import click

from cpt.commands import exits, load_vocabulary
from cpt.corruption import doc_rng, load_corpus, make_dae_instance, make_mlm_instance, synthetic_corpus
from cpt.models import build
from cpt.models.config import CorruptionConfig, model_preset
from cpt.vocab import Vocabulary

log = logging.getLogger("cpt")


def _aligned(rows: dict[str, Sequence[str]]) -> list[str]:
    """Label column, then one column per position padded to its widest cell."""
    width = max(len(cells) for cells in rows.values())
    cols = [max((len(cells[i]) for cells in rows.values() if i < len(cells)), default=0) for i in range(width)]
    label = max(len(name) for name in rows)
    return [
        f"{name:<{label}}  " + " ".join(cell.ljust(cols[i]) for i, cell in enumerate(cells)).rstrip()
        for name, cells in rows.items()
    ]


def mlm_dump(doc, cfg: CorruptionConfig, vocab: Vocabulary, max_len: Optional[int]) -> list[str]:
    inst = make_mlm_instance(doc, cfg, doc_rng(cfg.seed, doc.doc_id, "mlm"), vocab, max_len)
    if inst is None:
        return [f"# {doc.doc_id} mlm skipped"]
    original = inst.input_ids.copy()
    selected = inst.target_ids != vocab.ignore_id
    original[selected] = inst.target_ids[selected]
    rows = {
        "original": vocab.decode(original),
        "input": vocab.decode(inst.input_ids),
        "target": [vocab.token_of(int(t)) if keep else "-" for t, keep in zip(inst.target_ids, selected)],
    }
    return [f"# {doc.doc_id} mlm"] + _aligned(rows)


def dae_dump(doc, cfg: CorruptionConfig, vocab: Vocabulary, max_len: Optional[int]) -> list[str]:
    inst = make_dae_instance(doc, cfg, doc_rng(cfg.seed, doc.doc_id, "dae"), vocab, max_len)
    infills = "; ".join(f"{r.position}:{' '.join(vocab.decode(r.original))}" for r in inst.infills)
    return [
        f"# {doc.doc_id} dae",
        f"order   {' '.join(str(i) for i in inst.order)}",
        f"source  {' '.join(vocab.decode(inst.source_ids))}",
        f"target  {' '.join(vocab.decode(inst.target_ids))}",
        f"infills {infills or '-'}",
    ]


def cmd_corrupt(
    task: str,
    cfg: CorruptionConfig,
    vocab: Vocabulary,
    corpus=None,
    synthetic_docs: int = 8,
    limit: Optional[int] = None,
    max_len: Optional[int] = None,
) -> str:
    """Corrupted views of the first ``limit`` documents, as printed by ``cpt corrupt``."""
    docs = load_corpus(corpus, vocab) if corpus is not None else synthetic_corpus(synthetic_docs, cfg.seed, vocab)
    if limit is not None:
        docs = docs[:limit]
    dump = mlm_dump if task == "mlm" else dae_dump
    lines = []
    for doc in docs:
        lines.extend(dump(doc, cfg, vocab, max_len))
    return "".join(line + "\n" for line in lines)


@click.command("corrupt")
@click.option("--task", type=click.Choice(["mlm", "dae"]), default="mlm", show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--corpus", type=click.Path(), default=None)
@click.option("--synthetic-docs", type=int, default=8, show_default=True)
@click.option("--limit", type=int, default=None, help="Only the first N documents.")
@click.option("--max-len", type=int, default=None)
@click.option("--preset", default="desk", show_default=True, help="Supplies the vocabulary size.")
@click.option("--vocab", "vocab_file", type=click.Path(), default=None)
@click.option("--word-mask-rate", type=float, default=None)
@click.option("--infill-rate", "dae_infill_rate", type=float, default=None)
@click.option("--granularity", "replacement_granularity", type=click.Choice(["token", "word"]), default=None)
@click.option("--permute/--no-permute", "permute_sentences", default=None)
@exits
def corrupt_command(task, seed, corpus, synthetic_docs, limit, max_len, preset, vocab_file, **overrides):
    """Print original, corrupted and target rows for audit."""
    cfg = build(CorruptionConfig, seed=seed, **{k: v for k, v in overrides.items() if v is not None})
    vocab = load_vocabulary(vocab_file, model_preset(preset).vocab_size)
    click.echo(cmd_corrupt(task, cfg, vocab, corpus, synthetic_docs, limit, max_len), nl=False)
