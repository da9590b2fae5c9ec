#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Pre-training (MLM through S-Enc + U-Dec, DAE through S-Enc + G-Dec) and the
fine-tuning topologies for classification, sequence labeling, reading
comprehension and conditional generation.

Modes: ``u`` reads U-Dec, ``g`` feeds the encoder input to G-Dec as well and
reads it at aligned positions, ``ug`` concatenates both. ``u_prompt`` fills a
masked template slot with the MLM head, ``g_prompt`` ranks label completions
by perplexity under the LM head.
"""

from __future__ import annotations

import logging
import math
import sys
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from tqdm import tqdm

from cpt.blocks import NEG_INF, init_array
from cpt.corruption import (
    DAEBatch,
    MLMBatch,
    CorpusReport,
    build_batch,
    doc_rng,
    make_dae_instance,
    make_mlm_instance,
    shift_right,
)
from cpt.decoding import greedy_decode, pad_rows, strip_eos
from cpt.exceptions import BatchError, ConfigError, NumericError, ShapeError, TrainingExampleError
from cpt.managers import CheckpointManager, MetricsWriter
from cpt.models.config import FineTuneMode, GenerationConfig, PromptSpec, RunConfig, ScheduleConfig, TaskKind, TaskSpec
from cpt.models.corpus import ClassifyRecord, Document, MrcRecord, SeqLabelRecord
from cpt.models.reports import MetricsRow
from cpt.network import CPTParams, encode, generate_forward, lm_logits, mlm_logits, part_of, understand
from cpt.optim import AdamState, adam_step, lr_at_step
from cpt.tensor import Tensor, backward, concat, cross_entropy, no_grad, softmax
from cpt.vocab import BOS_ID, CLS_ID, EOS_ID, MASK_ID, SEP_ID, Vocabulary

log = logging.getLogger("cpt")

U_MODES = (FineTuneMode.u, FineTuneMode.ug)
G_MODES = (FineTuneMode.g, FineTuneMode.ug)


def _check_finite(loss: Tensor, what: str, ids: Sequence[str]):
    if not np.all(np.isfinite(loss.values)):
        raise NumericError(f"{what} loss is {float(loss.values)} for batch {list(ids)}")


############### pre-training ###############


@dataclass
class PretrainLosses:
    mlm: float
    dae: float
    lr: float = 0.0


def mlm_loss(batch: MLMBatch, params: CPTParams, rng: np.random.Generator | None = None) -> Tensor:
    enc = encode(batch.input_ids, batch.pad_mask, params, rng)
    states = understand(enc, batch.pad_mask, params, rng)
    return cross_entropy(mlm_logits(states, params), batch.target_ids)


def dae_loss(batch: DAEBatch, params: CPTParams, rng: np.random.Generator | None = None) -> Tensor:
    enc = encode(batch.source_ids, batch.source_mask, params, rng)
    states = generate_forward(batch.decoder_input_ids, enc, batch.source_mask, params, rng)
    return cross_entropy(lm_logits(states, params), batch.target_ids)


def mlm_accuracy(batch: MLMBatch, params: CPTParams) -> float:
    """Share of scored MLM positions whose argmax prediction is the original token."""
    with no_grad():
        enc = encode(batch.input_ids, batch.pad_mask, params)
        logits = mlm_logits(understand(enc, batch.pad_mask, params), params).values
    scored = batch.target_ids != params.config.vocab_size
    if not scored.any():
        return 0.0
    return float(np.mean(logits.argmax(axis=-1)[scored] == batch.target_ids[scored]))


def pretrain_gradients(
    mlm_batch: MLMBatch | None,
    dae_batch: DAEBatch | None,
    params: CPTParams,
    rng: np.random.Generator | None = None,
    mlm_first: bool = True,
) -> PretrainLosses:
    """Zero the gradients, then backpropagate mlm_loss + dae_loss (equal weight) into them."""
    if mlm_batch is None and dae_batch is None:
        raise BatchError("a pre-training step without an MLM or a DAE batch")
    params.zero_grad()
    parts = []
    if mlm_batch is not None:
        parts.append(("mlm", lambda: mlm_loss(mlm_batch, params, rng), mlm_batch.doc_ids))
    if dae_batch is not None:
        parts.append(("dae", lambda: dae_loss(dae_batch, params, rng), dae_batch.doc_ids))
    if not mlm_first:
        parts.reverse()
    values = {"mlm": 0.0, "dae": 0.0}
    total = None
    for name, fn, ids in parts:
        loss = fn()
        _check_finite(loss, name, ids)
        values[name] = loss.item()
        total = loss if total is None else total + loss
    backward(total)
    return PretrainLosses(values["mlm"], values["dae"])


def pretrain_step(
    mlm_batch: MLMBatch | None,
    dae_batch: DAEBatch | None,
    params: CPTParams,
    opt_state: AdamState,
    rng: np.random.Generator | None = None,
) -> PretrainLosses:
    losses = pretrain_gradients(mlm_batch, dae_batch, params, rng)
    losses.lr = adam_step(params.arrays, params.grads(), opt_state)
    return losses


def pretrain_batches(
    docs: Sequence[Document],
    run: RunConfig,
    vocab: Vocabulary,
    step: int,
    report: CorpusReport | None = None,
) -> tuple[MLMBatch | None, DAEBatch | None]:
    """The MLM and DAE batches of one step; documents are reshuffled every epoch."""
    size = min(run.batch_size, len(docs))
    per_epoch = math.ceil(len(docs) / size)
    epoch, index = divmod(step, per_epoch)
    order = doc_rng(run.seed, "", "order", epoch).permutation(len(docs))
    chosen = [docs[i] for i in order[index * size : (index + 1) * size]]
    cfg = run.corruption
    ignore = vocab.ignore_id

    mlm = dae = None
    if run.task in ("joint", "mlm-only"):
        instances = [
            make_mlm_instance(d, cfg, doc_rng(run.seed, d.doc_id, "mlm", epoch), vocab, run.max_len, report)
            for d in chosen
        ]
        instances = [inst for inst in instances if inst is not None]
        if instances:
            mlm = build_batch(instances, None, ignore)
    if run.task in ("joint", "dae-only"):
        instances = [
            make_dae_instance(d, cfg, doc_rng(run.seed, d.doc_id, "dae", epoch), vocab, run.max_len, report)
            for d in chosen
        ]
        dae = build_batch(instances, None, ignore)
    return mlm, dae


############### heads & prompts ###############


class TaskHeads:
    """Task-specific output arrays, registered as ``head.<name>``."""

    def __init__(self, width: int, arrays: dict[str, Tensor]):
        self.width = width
        self.arrays = arrays

    @classmethod
    def create(cls, task: TaskSpec, hidden: int, rng: np.random.Generator, std: float = 0.02) -> TaskHeads:
        width = 2 * hidden if task.mode == FineTuneMode.ug else hidden
        shapes = {}
        if task.kind == TaskKind.classify and task.mode in (FineTuneMode.u, FineTuneMode.g, FineTuneMode.ug):
            shapes = {"classifier.weight": (width, len(task.labels)), "classifier.bias": (len(task.labels),)}
        elif task.kind == TaskKind.seqlabel:
            shapes = {"tagger.weight": (width, len(task.tags)), "tagger.bias": (len(task.tags),)}
        elif task.kind == TaskKind.mrc:
            shapes = {"span.start": (width, 1), "span.end": (width, 1)}
        arrays = {
            f"head.{name}": Tensor.parameter(init_array(name, shape, rng, std), name=f"head.{name}")
            for name, shape in shapes.items()
        }
        return cls(width, arrays)

    def __getitem__(self, name: str) -> Tensor:
        key = f"head.{name}"
        if key not in self.arrays:
            raise ConfigError(f"no {name} head for this task")
        return self.arrays[key]

    def named_arrays(self) -> dict[str, Tensor]:
        return dict(self.arrays)

    def zero_grad(self):
        for t in self.arrays.values():
            t.zero_grad()


@dataclass
class CompiledPrompt:
    prefix: list[int]
    suffix: list[int]
    words: list[list[int]]  # one per label, in label order
    reduce: str = "arithmetic"
    pick: str = "lowest"

    @property
    def span(self) -> int:
        return max(len(w) for w in self.words)


def compile_prompt(prompt: PromptSpec, labels: Sequence[str], vocab: Vocabulary) -> CompiledPrompt:
    missing = [label for label in labels if label not in prompt.verbalizers]
    if missing:
        raise ConfigError(f"no verbalizer for label(s) {missing}")
    return CompiledPrompt(
        prefix=vocab.strict_lookup(prompt.prefix),
        suffix=vocab.strict_lookup(prompt.suffix),
        words=[vocab.strict_lookup(prompt.verbalizers[label]) for label in labels],
        reduce=prompt.u_prompt_reduce,
        pick=prompt.g_prompt_pick,
    )


def build_u_prompt_input(x: Sequence[int], prompt: CompiledPrompt) -> tuple[list[int], int]:
    """``[CLS] x prefix [MASK]*L suffix [SEP]`` and the index of the first [MASK]."""
    head = [CLS_ID, *x, *prompt.prefix]
    return head + [MASK_ID] * prompt.span + [*prompt.suffix, SEP_ID], len(head)


def build_g_prompt_targets(prompt: CompiledPrompt, label_index: int) -> tuple[list[int], int]:
    """Completion ``prefix word suffix [EOS]`` and how many leading tokens are scored."""
    word = prompt.words[label_index]
    return [*prompt.prefix, *word, *prompt.suffix, EOS_ID], len(prompt.prefix) + len(word)


def frame_single(x: Sequence[int]) -> list[int]:
    return [CLS_ID, *x, SEP_ID]


def frame_pair(question: Sequence[int], passage: Sequence[int]) -> tuple[list[int], int]:
    """``[CLS] question [SEP] passage [SEP]`` and the index where the passage starts."""
    return [CLS_ID, *question, SEP_ID, *passage, SEP_ID], len(question) + 2


def _path_states(ids, mask, mode: FineTuneMode, params: CPTParams, bos: bool, rng=None):
    """U-Dec and/or G-Dec states aligned to ``ids`` positions."""
    enc = encode(ids, mask, params, rng)
    u = understand(enc, mask, params, rng) if mode in U_MODES else None
    g = None
    if mode in G_MODES:
        dec = np.concatenate([np.full((ids.shape[0], 1), BOS_ID), ids], axis=1) if bos else ids
        g = generate_forward(dec, enc, mask, params, rng)
        if bos:
            g = g[:, 1:, :]
    return u, g


############### classification ###############


def classify_forward(
    rows: Sequence[Sequence[int]],
    mode: FineTuneMode,
    params: CPTParams,
    heads: Optional[TaskHeads] = None,
    prompt: Optional[CompiledPrompt] = None,
    g_decoder_bos: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Label scores ``(batch, labels)``; the predicted label is the argmax."""
    mode = FineTuneMode(mode)
    prompted = mode in (FineTuneMode.u_prompt, FineTuneMode.g_prompt)
    if prompted and prompt is None:
        raise ConfigError(f"mode {mode.value} needs a prompt")
    if mode == FineTuneMode.u_prompt:
        return _u_prompt_scores(rows, params, prompt, rng)
    if mode == FineTuneMode.g_prompt:
        return _g_prompt_scores(rows, params, prompt, rng)
    if heads is None:
        raise ConfigError(f"mode {mode.value} needs a classifier head")

    ids, mask = pad_rows([frame_single(x) for x in rows])
    u, g = _path_states(ids, mask, mode, params, g_decoder_bos, rng)
    batch = np.arange(ids.shape[0])
    features = []
    if u is not None:
        features.append(u[:, 0, :])
    if g is not None:
        features.append(g[batch, mask.sum(axis=1) - 1])
    feat = features[0] if len(features) == 1 else concat(features, axis=-1)
    return feat @ heads["classifier.weight"] + heads["classifier.bias"]


def _u_prompt_logits(rows, params: CPTParams, prompt: CompiledPrompt, rng=None) -> Tensor:
    """MLM logits ``(batch, span, V)`` at the template's mask slot."""
    built = [build_u_prompt_input(x, prompt) for x in rows]
    ids, mask = pad_rows([b[0] for b in built])
    states = understand(encode(ids, mask, params, rng), mask, params, rng)
    starts = np.array([b[1] for b in built])
    positions = starts[:, None] + np.arange(prompt.span)[None, :]
    slot = states[np.arange(len(rows))[:, None], positions]
    return mlm_logits(slot, params)


def _u_prompt_scores(rows, params, prompt: CompiledPrompt, rng=None) -> Tensor:
    probs = softmax(_u_prompt_logits(rows, params, prompt, rng), axis=-1)
    batch = np.arange(len(rows))[:, None]
    columns = []
    for word in prompt.words:
        p = probs[batch, np.arange(len(word))[None, :], np.asarray(word)[None, :]]
        if prompt.reduce == "geometric":
            columns.append(p.log().mean(axis=1, keepdims=True).exp())
        else:
            columns.append(p.mean(axis=1, keepdims=True))
    return concat(columns, axis=-1)


def _g_prompt_scores(rows, params: CPTParams, prompt: CompiledPrompt, rng=None) -> Tensor:
    """Per label, +-perplexity of its completion over the prefix and label word."""
    ids, mask = pad_rows([frame_single(x) for x in rows])
    enc = encode(ids, mask, params, rng)
    V = params.config.vocab_size
    columns = []
    for c in range(len(prompt.words)):
        target, scored = build_g_prompt_targets(prompt, c)
        targets = np.tile(np.asarray(target), (len(rows), 1))
        decoder_in = np.tile(shift_right(target), (len(rows), 1))
        logits = lm_logits(generate_forward(decoder_in, enc, mask, params, rng), params)
        window = targets.copy()
        window[:, scored:] = V
        nll = cross_entropy(logits, window, reduction="none")
        perplexity = (nll.sum(axis=1, keepdims=True) * (1.0 / scored)).exp()
        columns.append(-perplexity if prompt.pick == "lowest" else perplexity)
    return concat(columns, axis=-1)


def _label_indices(records: Sequence[ClassifyRecord], labels: Sequence[str]) -> np.ndarray:
    out = []
    for r in records:
        if r.label not in labels:
            raise TrainingExampleError(f"label {r.label!r} is not one of {list(labels)}")
        out.append(labels.index(r.label))
    return np.asarray(out, dtype=np.int64)


def classify_loss(task: TaskSpec, records, params, heads, vocab: Vocabulary, prompt, rng=None) -> Tensor:
    rows = [vocab.lookup(r.tokens)[0] for r in records]
    gold = _label_indices(records, task.labels)
    if task.mode == FineTuneMode.u_prompt:
        logits = _u_prompt_logits(rows, params, prompt, rng)
        targets = np.full((len(rows), prompt.span), params.config.vocab_size, dtype=np.int64)
        for i, label in enumerate(gold):
            word = prompt.words[label]
            targets[i, : len(word)] = word
        return cross_entropy(logits, targets)
    if task.mode == FineTuneMode.g_prompt:
        ids, mask = pad_rows([frame_single(x) for x in rows])
        enc = encode(ids, mask, params, rng)
        completions = [build_g_prompt_targets(prompt, label)[0] for label in gold]
        targets, _ = pad_rows(completions, fill=params.config.vocab_size)
        decoder_in, _ = pad_rows([shift_right(t).tolist() for t in completions])
        logits = lm_logits(generate_forward(decoder_in, enc, mask, params, rng), params)
        return cross_entropy(logits, targets)
    scores = classify_forward(rows, task.mode, params, heads, None, task.g_decoder_bos, rng)
    return cross_entropy(scores, gold)


############### sequence labeling ###############


def seq_label_forward(
    rows: Sequence[Sequence[int]],
    mode: FineTuneMode,
    params: CPTParams,
    heads: TaskHeads,
    g_decoder_bos: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Tag logits ``(batch, longest row, tags)`` aligned to the input tokens."""
    mode = FineTuneMode(mode)
    if mode not in (FineTuneMode.u, FineTuneMode.g, FineTuneMode.ug):
        raise ConfigError(f"mode {mode.value} is not available for sequence labeling")
    ids, mask = pad_rows([frame_single(x) for x in rows])
    width = max(len(x) for x in rows)
    u, g = _path_states(ids, mask, mode, params, g_decoder_bos, rng)
    tokens = (slice(None), slice(1, width + 1))
    features = [s[tokens] for s in (u, g) if s is not None]
    feat = features[0] if len(features) == 1 else concat(features, axis=-1)
    return feat @ heads["tagger.weight"] + heads["tagger.bias"]


def seq_label_loss(task: TaskSpec, records: Sequence[SeqLabelRecord], params, heads, vocab, rng=None) -> Tensor:
    rows, tag_rows = [], []
    for r in records:
        if len(r.tags) != len(r.tokens):
            raise ShapeError(f"{len(r.tags)} tags for {len(r.tokens)} positions")
        unknown = [t for t in r.tags if t not in task.tags]
        if unknown:
            raise TrainingExampleError(f"tag(s) {unknown} not in {task.tags}")
        rows.append(vocab.lookup(r.tokens)[0])
        tag_rows.append([task.tags.index(t) for t in r.tags])
    logits = seq_label_forward(rows, task.mode, params, heads, task.g_decoder_bos, rng)
    targets, _ = pad_rows(tag_rows, fill=len(task.tags))
    return cross_entropy(logits, targets, ignore_index=len(task.tags))


def bio_entities(tags: Sequence[str]) -> set[tuple[int, int, str]]:
    """(start, end exclusive, type) spans of a BIO sequence; a stray I- opens a new entity."""
    spans = set()
    start, kind = None, None
    for i, tag in enumerate(list(tags) + ["O"]):
        prefix, _, label = tag.partition("-")
        continues = prefix == "I" and start is not None and label == kind
        if start is not None and not continues:
            spans.add((start, i, kind))
            start, kind = None, None
        if prefix == "B" or (prefix == "I" and not continues):
            start, kind = i, label
    return spans


############### reading comprehension ###############


@dataclass
class MrcOutput:
    start_logits: Tensor
    end_logits: Tensor
    passage_mask: np.ndarray
    offsets: list[int]
    spans: list[tuple[int, int]]  # passage-relative, inclusive


def decode_span(start: np.ndarray, end: np.ndarray, passage_mask: np.ndarray, max_span: int) -> tuple[int, int]:
    """Best (s, e) with s <= e, e - s < max_span and both inside the passage."""
    n = len(start)
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    allowed = (j >= i) & (j - i < max_span) & passage_mask[:, None] & passage_mask[None, :]
    scores = np.where(allowed, start[:, None] + end[None, :], -np.inf)
    s, e = divmod(int(np.argmax(scores)), n)
    return s, e


def mrc_forward(
    pairs: Sequence[tuple[Sequence[int], Sequence[int]]],
    mode: FineTuneMode,
    params: CPTParams,
    heads: TaskHeads,
    max_span: int = 16,
    g_decoder_bos: bool = False,
    rng: np.random.Generator | None = None,
) -> MrcOutput:
    mode = FineTuneMode(mode)
    if mode not in (FineTuneMode.u, FineTuneMode.g, FineTuneMode.ug):
        raise ConfigError(f"mode {mode.value} is not available for reading comprehension")
    framed = [frame_pair(q, p) for q, p in pairs]
    ids, mask = pad_rows([f[0] for f in framed])
    offsets = [f[1] for f in framed]
    passage_mask = np.zeros_like(mask)
    for row, ((_, passage), offset) in enumerate(zip(pairs, offsets)):
        passage_mask[row, offset : offset + len(passage)] = True

    u, g = _path_states(ids, mask, mode, params, g_decoder_bos, rng)
    features = [s for s in (u, g) if s is not None]
    feat = features[0] if len(features) == 1 else concat(features, axis=-1)
    B, T = ids.shape
    outside = np.where(passage_mask, 0.0, NEG_INF)
    start = (feat @ heads["span.start"]).reshape((B, T)) + outside
    end = (feat @ heads["span.end"]).reshape((B, T)) + outside
    spans = []
    for row in range(B):
        s, e = decode_span(start.values[row], end.values[row], passage_mask[row], max_span)
        spans.append((s - offsets[row], e - offsets[row]))
    return MrcOutput(start, end, passage_mask, offsets, spans)


def mrc_loss(task: TaskSpec, records: Sequence[MrcRecord], params, heads, vocab, rng=None) -> Tensor:
    pairs = []
    for r in records:
        if r.answer_start > r.answer_end or r.answer_end >= len(r.passage):
            raise TrainingExampleError(
                f"gold span ({r.answer_start}, {r.answer_end}) lies outside a passage of {len(r.passage)} tokens"
            )
        pairs.append((vocab.lookup(r.question)[0], vocab.lookup(r.passage)[0]))
    out = mrc_forward(pairs, task.mode, params, heads, task.max_span, task.g_decoder_bos, rng)
    starts = np.array([o + r.answer_start for o, r in zip(out.offsets, records)])
    ends = np.array([o + r.answer_end for o, r in zip(out.offsets, records)])
    return cross_entropy(out.start_logits, starts) + cross_entropy(out.end_logits, ends)


############### conditional generation ###############


def cond_gen_loss(src_rows, tgt_rows, params: CPTParams, rng: np.random.Generator | None = None) -> Tensor:
    if any(len(t) == 0 for t in tgt_rows):
        raise TrainingExampleError("empty generation target")
    targets = [[*t, EOS_ID] for t in tgt_rows]
    src, src_mask = pad_rows(src_rows)
    gold, _ = pad_rows(targets, fill=params.config.vocab_size)
    decoder_in, _ = pad_rows([shift_right(t).tolist() for t in targets])
    enc = encode(src, src_mask, params, rng)
    return cross_entropy(lm_logits(generate_forward(decoder_in, enc, src_mask, params, rng), params), gold)


def cond_gen_finetune_step(src_rows, tgt_rows, params: CPTParams, opt_state: AdamState, rng=None) -> float:
    """One teacher-forced step through S-Enc + G-Dec; U-Dec gets no gradient."""
    params.zero_grad()
    loss = cond_gen_loss(src_rows, tgt_rows, params, rng)
    _check_finite(loss, "generation", [str(i) for i in range(len(src_rows))])
    backward(loss)
    gen_arrays = {name: t for name, t in params.arrays.items() if part_of(name) != "udec"}
    adam_step(gen_arrays, {name: t.grad for name, t in gen_arrays.items()}, opt_state)
    return loss.item()


############### fine-tuning dispatch ###############


def task_loss(task: TaskSpec, records, params, heads, vocab, prompt=None, rng=None) -> Tensor:
    if task.kind == TaskKind.classify:
        return classify_loss(task, records, params, heads, vocab, prompt, rng)
    if task.kind == TaskKind.seqlabel:
        return seq_label_loss(task, records, params, heads, vocab, rng)
    if task.kind == TaskKind.mrc:
        return mrc_loss(task, records, params, heads, vocab, rng)
    raise ConfigError(f"{task.kind.value} has no task head; fine-tune it with cond_gen_finetune_step")


def finetune_step(
    task: TaskSpec,
    records: Sequence,
    params: CPTParams,
    heads: TaskHeads,
    opt_state: AdamState,
    vocab: Vocabulary,
    prompt: Optional[CompiledPrompt] = None,
    rng: np.random.Generator | None = None,
) -> float:
    if task.kind == TaskKind.gen:
        src_rows = [vocab.lookup(r.source)[0] for r in records]
        tgt_rows = [vocab.lookup(r.target)[0] for r in records]
        return cond_gen_finetune_step(src_rows, tgt_rows, params, opt_state, rng)
    params.zero_grad()
    heads.zero_grad()
    loss = task_loss(task, records, params, heads, vocab, prompt, rng)
    _check_finite(loss, task.kind.value, [str(i) for i in range(len(records))])
    backward(loss)
    arrays = {**params.arrays, **heads.arrays}
    adam_step(arrays, {name: t.grad for name, t in arrays.items()}, opt_state)
    return loss.item()


def _batches(records, size):
    for start in range(0, len(records), size):
        yield records[start : start + size]


def evaluate(
    task: TaskSpec,
    records: Sequence,
    params: CPTParams,
    heads: TaskHeads,
    vocab: Vocabulary,
    prompt: Optional[CompiledPrompt] = None,
    batch_size: int = 32,
    gen_cfg: Optional[GenerationConfig] = None,
) -> dict[str, float]:
    """accuracy (classify), entity F1 (seqlabel), exact match (mrc, gen)."""
    with no_grad():
        if task.kind == TaskKind.classify:
            hits = 0
            for chunk in _batches(records, batch_size):
                rows = [vocab.lookup(r.tokens)[0] for r in chunk]
                scores = classify_forward(rows, task.mode, params, heads, prompt, task.g_decoder_bos).values
                hits += int((scores.argmax(axis=1) == _label_indices(chunk, task.labels)).sum())
            return {"accuracy": hits / len(records)}

        if task.kind == TaskKind.seqlabel:
            tp = n_pred = n_gold = correct = total = 0
            for chunk in _batches(records, batch_size):
                rows = [vocab.lookup(r.tokens)[0] for r in chunk]
                logits = seq_label_forward(rows, task.mode, params, heads, task.g_decoder_bos).values
                for r, row_logits in zip(chunk, logits):
                    predicted = [task.tags[i] for i in row_logits[: len(r.tags)].argmax(axis=1)]
                    gold, pred = bio_entities(r.tags), bio_entities(predicted)
                    tp += len(gold & pred)
                    n_pred += len(pred)
                    n_gold += len(gold)
                    correct += sum(p == t for p, t in zip(predicted, r.tags))
                    total += len(r.tags)
            precision = tp / n_pred if n_pred else 0.0
            recall = tp / n_gold if n_gold else 0.0
            f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
            return {"f1": f1, "precision": precision, "recall": recall, "tag_accuracy": correct / total}

        if task.kind == TaskKind.mrc:
            hits = 0
            for chunk in _batches(records, batch_size):
                pairs = [(vocab.lookup(r.question)[0], vocab.lookup(r.passage)[0]) for r in chunk]
                out = mrc_forward(pairs, task.mode, params, heads, task.max_span, task.g_decoder_bos)
                hits += sum(span == (r.answer_start, r.answer_end) for span, r in zip(out.spans, chunk))
            return {"exact_match": hits / len(records)}

    cfg = gen_cfg or GenerationConfig(max_new_tokens=max(len(r.target) for r in records) + 1)
    hits = 0
    for chunk in _batches(records, batch_size):
        outputs = greedy_decode([vocab.lookup(r.source)[0] for r in chunk], params, cfg)
        hits += sum(strip_eos(o) == vocab.lookup(r.target)[0] for o, r in zip(outputs, chunk))
    return {"exact_match": hits / len(records)}


############### trainer ###############


class Trainer:
    """Owns the parameters during a run; logs metrics and writes checkpoints."""

    def __init__(
        self,
        params: CPTParams,
        vocab: Vocabulary,
        seed: int,
        metrics: Optional[MetricsWriter] = None,
        checkpoints: Optional[CheckpointManager] = None,
        quiet: bool = False,
    ):
        if len(vocab) != params.config.vocab_size:
            raise ConfigError(f"vocabulary has {len(vocab)} entries, model expects {params.config.vocab_size}")
        self.params = params
        self.vocab = vocab
        self.seed = seed
        self.metrics = metrics
        self.checkpoints = checkpoints
        self.quiet = quiet
        self._started = time.monotonic()

    def _progress(self, total: int, desc: str):
        return tqdm(range(total), desc=desc, disable=self.quiet or not sys.stderr.isatty(), leave=False)

    def _record(self, step: int, task: str, loss: float, lr: float):
        if self.metrics is not None:
            wall_ms = (time.monotonic() - self._started) * 1000.0
            self.metrics.write(MetricsRow(step=step, task=task, loss=loss, lr=lr, wall_ms=wall_ms))

    def _dropout_rng(self, stream: str, step: int):
        if self.params.config.dropout <= 0.0:
            return None
        return doc_rng(self.seed, "", stream, step)

    def pretrain(self, docs: Sequence[Document], run: RunConfig, adam_state: Optional[AdamState] = None) -> list[PretrainLosses]:
        adam_state = adam_state or AdamState.from_schedule(run.schedule)
        report = CorpusReport(documents=len(docs))
        history = []
        first = adam_state.step
        log.info(f"pre-training {run.task} from step {first} to {run.schedule.total_steps} on {len(docs)} documents")
        for i in self._progress(run.schedule.total_steps - first, "pretrain"):
            step = first + i + 1
            mlm, dae = pretrain_batches(docs, run, self.vocab, step - 1, report)
            losses = pretrain_step(mlm, dae, self.params, adam_state, self._dropout_rng("dropout", step))
            history.append(losses)
            self._record(step, "mlm", losses.mlm, losses.lr)
            self._record(step, "dae", losses.dae, losses.lr)
            log.debug(f"step {step} mlm={losses.mlm:.4f} dae={losses.dae:.4f} lr={losses.lr:.3g}")
            if self.checkpoints is not None and self.checkpoints.due(step):
                self.checkpoints.save(step, self.params, adam_state, seed=run.seed, task=run.task)
        last = adam_state.step
        if self.checkpoints is not None and not self.checkpoints.path_for(last).exists():
            self.checkpoints.save(last, self.params, adam_state, seed=run.seed, task=run.task)
        if report.truncated or report.skipped:
            log.warning(f"{report.truncated} truncated and {report.skipped} skipped instance(s) during pre-training")
        return history

    def finetune(
        self,
        task: TaskSpec,
        train: Sequence,
        steps: int,
        batch_size: int,
        schedule: ScheduleConfig,
        heads: Optional[TaskHeads] = None,
    ) -> tuple[TaskHeads, Optional[CompiledPrompt], list[float]]:
        """Fine-tune ``self.params`` (and a fresh head) in place on ``train``."""
        if not train:
            raise TrainingExampleError("empty training set")
        heads = heads or TaskHeads.create(task, self.params.config.hidden, doc_rng(self.seed, "", "heads"))
        prompt = compile_prompt(task.prompt, task.labels, self.vocab) if task.prompt is not None else None
        adam_state = AdamState.from_schedule(schedule)
        size = min(batch_size, len(train))
        per_epoch = math.ceil(len(train) / size)
        losses = []
        log.info(f"fine-tuning {task.kind.value}/{task.mode.value} for {steps} steps on {len(train)} records")
        for i in self._progress(steps, f"finetune {task.kind.value}"):
            epoch, index = divmod(i, per_epoch)
            order = doc_rng(self.seed, "", f"finetune-{task.kind.value}", epoch).permutation(len(train))
            chunk = [train[j] for j in order[index * size : (index + 1) * size]]
            loss = finetune_step(
                task, chunk, self.params, heads, adam_state, self.vocab, prompt, self._dropout_rng("finetune", i)
            )
            losses.append(loss)
            self._record(i + 1, task.kind.value, loss, lr_at_step(adam_state))
        return heads, prompt, losses
