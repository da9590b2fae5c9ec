#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Corpus ingestion and the two pre-training corruptions.

MLM: whole-word masking. Words are selected i.i.d.; every token of a selected
word is replaced by [MASK], a random symbol or left as is (80/10/10).

DAE: sentence permutation followed by token infilling, where a selected word
collapses to a single [MASK] whatever its length. The decoder reconstructs the
original document.

Each document draws from its own generator (``doc_rng``), so instances do not
depend on the order in which documents are processed.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from cpt.exceptions import BatchError, DataError
from cpt.models import read_jsonl, write_jsonl
from cpt.models.config import CorruptionConfig
from cpt.models.corpus import Document
from cpt.vocab import BOS_ID, CLS_ID, EOS_ID, MASK_ID, NUM_SPECIAL, SEP_ID, SPECIAL_TOKENS, Vocabulary

log = logging.getLogger("cpt")

MASK_TOKEN = SPECIAL_TOKENS[MASK_ID]

# per-position MLM action codes
KEPT_CLEAN, MASKED, RANDOMIZED, KEPT = 0, 1, 2, 3


@dataclass
class CorpusReport:
    documents: int = 0
    unknown_tokens: int = 0
    skipped: int = 0
    truncated: int = 0


############### corpus files ###############


def load_corpus(path, vocab: Vocabulary | None = None, report: CorpusReport | None = None) -> list[Document]:
    """One JSON document per line; blank lines are skipped."""
    docs = read_jsonl(path, Document)
    unknown = sum(vocab.lookup(doc.tokens)[1] for doc in docs) if vocab is not None else 0
    if unknown:
        log.warning(f"{unknown} unknown token(s) in {path} will read as [UNK]")
    if report is not None:
        report.documents += len(docs)
        report.unknown_tokens += unknown
    log.info(f"loaded {len(docs)} documents from {path}")
    return docs


def write_corpus(path, docs: Sequence[Document]):
    write_jsonl(path, docs)


############### random streams ###############


def doc_rng(seed: int, doc_id: str, stream: str, epoch: int = 0) -> np.random.Generator:
    """Generator keyed on (seed, doc_id, stream, epoch) only."""
    digest = hashlib.blake2b(f"{seed}|{doc_id}|{stream}|{epoch}".encode("utf-8"), digest_size=16).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def synthetic_corpus(
    num_docs: int,
    seed: int,
    vocab: Vocabulary | None = None,
    num_words: int = 24,
    max_word_len: int = 3,
    sentence_words: tuple[int, int] = (3, 6),
    doc_sentences: tuple[int, int] = (2, 4),
) -> list[Document]:
    """
    Seeded toy corpus. A fixed lexicon of multi-token words is chained by a
    successor map, so every masked word is predictable from its neighbours.
    """
    vocab = vocab or Vocabulary.synthetic()
    symbols = vocab.tokens[NUM_SPECIAL:]
    if not symbols:
        raise DataError("vocabulary has no non-special symbols")
    rng = doc_rng(seed, "", "lexicon")
    lexicon: list[tuple[str, ...]] = []
    seen = set()
    while len(lexicon) < num_words:
        length = int(rng.integers(1, max_word_len + 1))
        word = tuple(symbols[int(i)] for i in rng.integers(0, len(symbols), size=length))
        if word not in seen:
            seen.add(word)
            lexicon.append(word)
    successor = rng.permutation(num_words)

    docs = []
    for d in range(num_docs):
        doc_id = f"syn-{seed}-{d:05d}"
        r = doc_rng(seed, doc_id, "synthetic")
        sentences = []
        for _ in range(int(r.integers(doc_sentences[0], doc_sentences[1] + 1))):
            w = int(r.integers(num_words))
            sentence = []
            for _ in range(int(r.integers(sentence_words[0], sentence_words[1] + 1))):
                sentence.append(list(lexicon[w]))
                w = int(successor[w])
            sentences.append(sentence)
        docs.append(Document(doc_id=doc_id, sentences=sentences))
    return docs


############### MLM ###############


@dataclass
class MLMInstance:
    doc_id: str
    input_ids: np.ndarray
    target_ids: np.ndarray
    actions: np.ndarray  # KEPT_CLEAN / MASKED / RANDOMIZED / KEPT per position
    word_spans: list[tuple[int, int]] = field(default_factory=list)  # [start, end) in input positions
    truncated: bool = False

    kind = "mlm"

    def __len__(self):
        return len(self.input_ids)


def _fit_words(words: list[list[str]], budget: int) -> tuple[list[list[str]], bool]:
    kept, used = [], 0
    for word in words:
        if used + len(word) > budget:
            return kept, True
        kept.append(word)
        used += len(word)
    return kept, False


def make_mlm_instance(
    doc: Document,
    cfg: CorruptionConfig,
    rng: np.random.Generator,
    vocab: Vocabulary,
    max_len: int | None = None,
    report: CorpusReport | None = None,
) -> MLMInstance | None:
    """
    ``[CLS] tokens [SEP]`` with whole-word corruption. Returns None (with a
    notice) for documents shorter than 2 tokens.
    """
    words = doc.words
    truncated = False
    if max_len is not None:
        words, truncated = _fit_words(words, max_len - 2)
    n_tokens = sum(len(w) for w in words)
    if n_tokens < 2:
        log.warning(f"document {doc.doc_id} has {n_tokens} token(s), MLM instance skipped")
        if report is not None:
            report.skipped += 1
        return None
    if truncated and report is not None:
        report.truncated += 1

    ids = [CLS_ID]
    spans = []
    for word in words:
        word_ids, _ = vocab.lookup(word)
        spans.append((len(ids), len(ids) + len(word_ids)))
        ids.extend(word_ids)
    ids.append(SEP_ID)
    original = np.asarray(ids, dtype=np.int64)
    inputs = original.copy()
    targets = np.full_like(original, vocab.ignore_id)
    actions = np.zeros_like(original)

    probs = [cfg.mask_frac, cfg.random_frac, cfg.keep_frac]
    selected = rng.random(len(spans)) < cfg.word_mask_rate
    for (start, end), chosen in zip(spans, selected):
        if not chosen:
            continue
        targets[start:end] = original[start:end]
        if cfg.replacement_granularity == "word":
            draws = np.full(end - start, rng.choice(3, p=probs))
        else:
            draws = rng.choice(3, size=end - start, p=probs)
        for pos, draw in zip(range(start, end), draws):
            if draw == 0:
                inputs[pos] = MASK_ID
                actions[pos] = MASKED
            elif draw == 1:
                inputs[pos] = rng.integers(NUM_SPECIAL, len(vocab))
                actions[pos] = RANDOMIZED
            else:
                actions[pos] = KEPT
    return MLMInstance(doc.doc_id, inputs, targets, actions, spans, truncated)


############### DAE ###############


@dataclass(frozen=True)
class InfillRecord:
    position: int  # index of the [MASK] in the corrupted source
    original: tuple  # tokens (or ids) the [MASK] replaced


def token_infill(doc: Document, cfg: CorruptionConfig, rng: np.random.Generator) -> tuple[list[str], list[InfillRecord]]:
    """Collapse each selected word to exactly one [MASK]; everything else passes through in order."""
    out: list[str] = []
    records = []
    for word in doc.words:
        if rng.random() < cfg.dae_infill_rate:
            records.append(InfillRecord(len(out), tuple(word)))
            out.append(MASK_TOKEN)
        else:
            out.extend(word)
    return out, records


def sentence_permute(doc: Document, rng: np.random.Generator, return_order: bool = False):
    """
    Uniformly shuffle the sentences of ``doc``. With ``return_order`` the result
    is ``(document, order)`` where ``order[k]`` is the original index of the
    k-th output sentence.
    """
    n = len(doc.sentences)
    order = rng.permutation(n) if n > 1 else np.arange(n)
    permuted = doc if n < 2 else Document(doc_id=doc.doc_id, sentences=[doc.sentences[i] for i in order])
    return (permuted, order) if return_order else permuted


@dataclass
class DAEInstance:
    doc_id: str
    source_ids: np.ndarray
    target_ids: np.ndarray
    decoder_input_ids: np.ndarray
    order: tuple[int, ...]  # order[k] = original index of the k-th source sentence
    sentence_lengths: tuple[int, ...]  # token counts of the permuted sentences, before infilling
    infills: list[InfillRecord] = field(default_factory=list)
    truncated: bool = False

    kind = "dae"

    def __len__(self):
        return max(len(self.source_ids), len(self.target_ids))


def shift_right(target_ids) -> np.ndarray:
    """[BOS] followed by the target without its last token."""
    target_ids = np.asarray(target_ids, dtype=np.int64)
    return np.concatenate([[BOS_ID], target_ids[:-1]]).astype(np.int64)


def make_dae_instance(
    doc: Document,
    cfg: CorruptionConfig,
    rng: np.random.Generator,
    vocab: Vocabulary,
    max_positions: int | None = None,
    report: CorpusReport | None = None,
) -> DAEInstance:
    """Permute sentences (when enabled), infill, and pair with the original document plus [EOS]."""
    if cfg.permute_sentences:
        permuted, order = sentence_permute(doc, rng, return_order=True)
    else:
        permuted, order = doc, np.arange(len(doc.sentences))
    source_tokens, token_records = token_infill(permuted, cfg, rng)

    source_ids = np.asarray(vocab.lookup(source_tokens)[0], dtype=np.int64)
    target_ids = np.asarray(vocab.lookup(doc.tokens)[0] + [EOS_ID], dtype=np.int64)
    infills = [InfillRecord(r.position, tuple(vocab.lookup(r.original)[0])) for r in token_records]
    lengths = tuple(sum(len(w) for w in s) for s in permuted.sentences)

    truncated = False
    if max_positions is not None and (len(source_ids) > max_positions or len(target_ids) > max_positions):
        truncated = True
        source_ids = source_ids[:max_positions]
        target_ids = target_ids[:max_positions]
        if report is not None:
            report.truncated += 1
        log.warning(f"DAE instance {doc.doc_id} truncated to {max_positions} positions")
    return DAEInstance(
        doc_id=doc.doc_id,
        source_ids=source_ids,
        target_ids=target_ids,
        decoder_input_ids=shift_right(target_ids),
        order=tuple(int(i) for i in order),
        sentence_lengths=lengths,
        infills=infills,
        truncated=truncated,
    )


def restore_source(instance: DAEInstance) -> np.ndarray:
    """Undo infilling and permutation; the result equals ``target_ids`` without [EOS]."""
    if instance.truncated:
        raise DataError(f"instance {instance.doc_id} was truncated and cannot be restored")
    by_position = {r.position: r.original for r in instance.infills}
    tokens = []
    for pos, token in enumerate(instance.source_ids.tolist()):
        if pos in by_position:
            if token != MASK_ID:
                raise DataError(f"infill record at {pos} does not point at [MASK] in {instance.doc_id}")
            tokens.extend(by_position[pos])
        else:
            tokens.append(token)
    bounds = np.cumsum((0,) + instance.sentence_lengths)
    permuted = [tokens[bounds[k] : bounds[k + 1]] for k in range(len(instance.sentence_lengths))]
    restored = [None] * len(permuted)
    for k, original_index in enumerate(instance.order):
        restored[original_index] = permuted[k]
    return np.asarray([t for sentence in restored for t in sentence], dtype=np.int64)


############### batching ###############


@dataclass
class MLMBatch:
    input_ids: np.ndarray
    target_ids: np.ndarray
    pad_mask: np.ndarray  # True = real token
    doc_ids: list[str]

    kind = "mlm"


@dataclass
class DAEBatch:
    source_ids: np.ndarray
    source_mask: np.ndarray
    decoder_input_ids: np.ndarray
    target_ids: np.ndarray
    doc_ids: list[str]

    kind = "dae"


def _pad(rows: Sequence[np.ndarray], width: int, fill: int, doc_ids: Sequence[str], what: str) -> np.ndarray:
    out = np.full((len(rows), width), fill, dtype=np.int64)
    for i, row in enumerate(rows):
        if len(row) > width:
            raise BatchError(f"instance {doc_ids[i]}: {what} length {len(row)} exceeds pad_to={width}")
        out[i, : len(row)] = row
    return out


def build_batch(instances: Sequence, pad_to: int | None, ignore_id: int):
    """
    Right-pad a list of MLM or DAE instances. Pad positions hold [PAD] inputs,
    ``ignore_id`` targets and a false ``pad_mask``. With ``pad_to=None`` each
    field is padded to its own longest row.
    """
    if not instances:
        raise BatchError("an empty instance list")
    kinds = {inst.kind for inst in instances}
    if len(kinds) != 1:
        raise BatchError(f"mixed instance kinds {sorted(kinds)}")
    doc_ids = [inst.doc_id for inst in instances]

    def width(rows):
        return pad_to if pad_to is not None else max(len(r) for r in rows)

    if kinds == {"mlm"}:
        inputs = [inst.input_ids for inst in instances]
        w = width(inputs)
        input_ids = _pad(inputs, w, 0, doc_ids, "input")
        return MLMBatch(
            input_ids=input_ids,
            target_ids=_pad([inst.target_ids for inst in instances], w, ignore_id, doc_ids, "target"),
            pad_mask=_pad([np.ones(len(r), dtype=np.int64) for r in inputs], w, 0, doc_ids, "input").astype(bool),
            doc_ids=doc_ids,
        )
    sources = [inst.source_ids for inst in instances]
    targets = [inst.target_ids for inst in instances]
    ws, wt = width(sources), width(targets)
    return DAEBatch(
        source_ids=_pad(sources, ws, 0, doc_ids, "source"),
        source_mask=_pad([np.ones(len(r), dtype=np.int64) for r in sources], ws, 0, doc_ids, "source").astype(bool),
        decoder_input_ids=_pad([inst.decoder_input_ids for inst in instances], wt, 0, doc_ids, "decoder input"),
        target_ids=_pad(targets, wt, ignore_id, doc_ids, "target"),
        doc_ids=doc_ids,
    )
