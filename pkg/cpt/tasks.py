#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Fine-tuning datasets: seeded synthetic tasks and JSON-lines loading.

Every synthetic task is easy on purpose (the label is carried by specific
tokens), so a desk-scale model can fit it within a few hundred steps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from cpt.corruption import doc_rng
from cpt.exceptions import ConfigError
from cpt.models import read_jsonl
from cpt.models.config import PromptSpec, TaskKind
from cpt.models.corpus import ClassifyRecord, GenRecord, MrcRecord, SeqLabelRecord
from cpt.vocab import NUM_SPECIAL, Vocabulary

log = logging.getLogger("cpt")

RECORD_TYPES = {
    TaskKind.classify: ClassifyRecord,
    TaskKind.seqlabel: SeqLabelRecord,
    TaskKind.mrc: MrcRecord,
    TaskKind.gen: GenRecord,
}

BIO_TAGS = ["O", "B-ENT", "I-ENT"]


@dataclass
class TaskData:
    kind: TaskKind
    train: list
    held_out: list
    labels: list[str] = field(default_factory=list)
    tags: list[str] = field(default_factory=list)
    prompt: Optional[PromptSpec] = None


def load_records(path, kind: TaskKind) -> list:
    records = read_jsonl(path, RECORD_TYPES[TaskKind(kind)])
    log.info(f"loaded {len(records)} {TaskKind(kind).value} records from {path}")
    return records


def split_records(records: list, held_out: float, seed: int) -> tuple[list, list]:
    if not 0.0 < held_out < 1.0:
        raise ConfigError(f"held-out fraction must lie in (0, 1), got {held_out}")
    order = doc_rng(seed, "", "split").permutation(len(records))
    n_test = max(1, int(round(len(records) * held_out)))
    test = [records[i] for i in order[:n_test]]
    train = [records[i] for i in order[n_test:]]
    return train, test


############### synthetic tasks ###############


def _symbols(vocab: Vocabulary, count: int | None = None) -> list[str]:
    symbols = vocab.tokens[NUM_SPECIAL:]
    if count is not None:
        symbols = symbols[:count]
    if len(symbols) < 8:
        raise ConfigError(f"synthetic tasks need at least 8 symbols, vocabulary has {len(symbols)}")
    return symbols


def synthetic_classification(vocab: Vocabulary, n: int, seed: int, length: int = 8) -> tuple[list[ClassifyRecord], PromptSpec]:
    """
    Two classes told apart by one marker token planted among filler. The
    markers double as the label words of the prompt.
    """
    symbols = _symbols(vocab)
    markers = {"neg": symbols[0], "pos": symbols[1]}
    filler = symbols[2:]
    records = []
    for i in range(n):
        rng = doc_rng(seed, f"cls-{i}", "synthetic")
        label = "pos" if rng.random() < 0.5 else "neg"
        tokens = [filler[int(j)] for j in rng.integers(0, len(filler), size=length)]
        tokens[int(rng.integers(length))] = markers[label]
        records.append(ClassifyRecord(tokens=tokens, label=label))
    prompt = PromptSpec(prefix=[symbols[2]], suffix=[], verbalizers={k: [v] for k, v in markers.items()})
    return records, prompt


def synthetic_bio(vocab: Vocabulary, n: int, seed: int, length: int = 10) -> list[SeqLabelRecord]:
    """A two-token entity pattern planted once or twice in filler; tags are BIO."""
    symbols = _symbols(vocab)
    first, second = symbols[0], symbols[1]
    filler = symbols[2:]
    records = []
    for i in range(n):
        rng = doc_rng(seed, f"bio-{i}", "synthetic")
        tokens = [filler[int(j)] for j in rng.integers(0, len(filler), size=length)]
        tags = ["O"] * length
        for _ in range(int(rng.integers(1, 3))):
            start = int(rng.integers(0, length - 1))
            if tags[start] != "O" or tags[start + 1] != "O":
                continue
            tokens[start], tokens[start + 1] = first, second
            tags[start], tags[start + 1] = "B-ENT", "I-ENT"
        records.append(SeqLabelRecord(tokens=tokens, tags=tags))
    return records


def synthetic_mrc(vocab: Vocabulary, n: int, seed: int, passage_len: int = 12, max_answer: int = 4) -> list[MrcRecord]:
    """
    The answer runs from an opening marker to a closing marker inside the
    passage; the question names the two markers.
    """
    symbols = _symbols(vocab)
    opening, closing = symbols[0], symbols[1]
    filler = symbols[2:]
    records = []
    for i in range(n):
        rng = doc_rng(seed, f"mrc-{i}", "synthetic")
        passage = [filler[int(j)] for j in rng.integers(0, len(filler), size=passage_len)]
        span = int(rng.integers(2, max_answer + 1))
        start = int(rng.integers(0, passage_len - span + 1))
        end = start + span - 1
        passage[start], passage[end] = opening, closing
        records.append(MrcRecord(question=[opening, closing], passage=passage, answer_start=start, answer_end=end))
    return records


def synthetic_generation(
    vocab: Vocabulary,
    n: int,
    seed: int,
    task: str = "copy",
    length: int = 8,
    num_symbols: int = 32,
) -> list[GenRecord]:
    """Fixed-length identity (``copy``) or ``reverse`` pairs over the first ``num_symbols`` symbols."""
    if task not in ("copy", "reverse"):
        raise ConfigError(f"unknown generation task {task!r}")
    symbols = _symbols(vocab, num_symbols)
    records = []
    for i in range(n):
        rng = doc_rng(seed, f"gen-{i}", task)
        source = [symbols[int(j)] for j in rng.integers(0, len(symbols), size=length)]
        target = list(reversed(source)) if task == "reverse" else list(source)
        records.append(GenRecord(source=source, target=target))
    return records


def synthetic_task(kind: TaskKind, vocab: Vocabulary, seed: int, n_train: int = 256, n_held_out: int = 64, **kw) -> TaskData:
    """Train and held-out splits of a synthetic task, drawn from disjoint seeds."""
    kind = TaskKind(kind)
    held_seed = seed + 1_000_003
    if kind == TaskKind.classify:
        train, prompt = synthetic_classification(vocab, n_train, seed, **kw)
        held_out, _ = synthetic_classification(vocab, n_held_out, held_seed, **kw)
        return TaskData(kind, train, held_out, labels=["neg", "pos"], prompt=prompt)
    if kind == TaskKind.seqlabel:
        return TaskData(kind, synthetic_bio(vocab, n_train, seed, **kw), synthetic_bio(vocab, n_held_out, held_seed, **kw), tags=list(BIO_TAGS))
    if kind == TaskKind.mrc:
        return TaskData(kind, synthetic_mrc(vocab, n_train, seed, **kw), synthetic_mrc(vocab, n_held_out, held_seed, **kw))
    return TaskData(kind, synthetic_generation(vocab, n_train, seed, **kw), synthetic_generation(vocab, n_held_out, held_seed, **kw))
