#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Token vocabulary with fixed special ids.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

from cpt.exceptions import DataError, IndexLookupError, PathError, VocabularyMismatchError

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[BOS]", "[EOS]")
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID, BOS_ID, EOS_ID = range(len(SPECIAL_TOKENS))
NUM_SPECIAL = len(SPECIAL_TOKENS)


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:NUM_SPECIAL]) != SPECIAL_TOKENS:
            raise DataError(f"vocabulary must start with {SPECIAL_TOKENS}")
        self.tokens = list(tokens)
        self._ids = {}
        for i, token in enumerate(self.tokens):
            if token in self._ids:
                raise DataError(f"duplicate vocabulary entry {token!r}")
            self._ids[token] = i

    @classmethod
    def synthetic(cls, num_symbols: int = 256) -> Vocabulary:
        return cls(SPECIAL_TOKENS + tuple(f"s{i:03d}" for i in range(num_symbols)))

    @classmethod
    def for_size(cls, vocab_size: int) -> Vocabulary:
        return cls.synthetic(vocab_size - NUM_SPECIAL)

    @classmethod
    def from_file(cls, path) -> Vocabulary:
        path = Path(path)
        if not path.is_file():
            raise PathError(f"vocabulary file {path}")
        lines = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
        return cls([line for line in lines if line])

    def to_file(self, path):
        Path(path).write_text("".join(f"{t}\n" for t in self.tokens), encoding="utf-8")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token: str):
        return token in self._ids

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    @property
    def ignore_id(self) -> int:
        """Loss sentinel: one past the largest id."""
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def lookup(self, tokens: Iterable[str]) -> tuple[list[int], int]:
        """Map tokens to ids; unknown tokens become [UNK]. Returns (ids, unknown count)."""
        ids = []
        unknown = 0
        for token in tokens:
            i = self._ids.get(token)
            if i is None:
                unknown += 1
                i = UNK_ID
            ids.append(i)
        return ids, unknown

    def strict_lookup(self, tokens: Iterable[str]) -> list[int]:
        ids = []
        for token in tokens:
            if token not in self._ids:
                raise VocabularyMismatchError(f"token {token!r} is not in the vocabulary")
            ids.append(self._ids[token])
        return ids

    def token_of(self, i: int) -> str:
        if not 0 <= i < len(self.tokens):
            raise IndexLookupError("token", i, len(self.tokens))
        return self.tokens[i]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.token_of(int(i)) for i in ids]
