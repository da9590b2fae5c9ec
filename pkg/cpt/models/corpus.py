#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Line formats: pre-training documents and fine-tuning records (JSON lines).
"""

from __future__ import annotations

from pydantic import BaseModel, Field, field_validator, model_validator

############### Pre-training ###############


class Document(BaseModel):
    doc_id: str = Field(min_length=1)
    sentences: list[list[list[str]]] = Field(
        min_length=1, description="sentence -> word -> token nesting; word boundaries come from the corpus."
    )

    @field_validator("sentences")
    @classmethod
    def _no_empty_parts(cls, sentences):
        for s, sentence in enumerate(sentences):
            if not sentence:
                raise ValueError(f"sentence {s} is empty")
            for w, word in enumerate(sentence):
                if not word:
                    raise ValueError(f"word {w} of sentence {s} is empty")
                if any(not token for token in word):
                    raise ValueError(f"word {w} of sentence {s} has an empty token")
        return sentences

    @property
    def words(self) -> list[list[str]]:
        return [word for sentence in self.sentences for word in sentence]

    @property
    def tokens(self) -> list[str]:
        return [token for word in self.words for token in word]


############### Fine-tuning ###############


class ClassifyRecord(BaseModel):
    tokens: list[str] = Field(min_length=1)
    label: str


class SeqLabelRecord(BaseModel):
    tokens: list[str] = Field(min_length=1)
    tags: list[str]

    @model_validator(mode="after")
    def _aligned(self):
        if len(self.tags) != len(self.tokens):
            raise ValueError(f"{len(self.tags)} tags for {len(self.tokens)} tokens")
        return self


class MrcRecord(BaseModel):
    question: list[str] = Field(min_length=1)
    passage: list[str] = Field(min_length=1)
    answer_start: int = Field(ge=0, description="Inclusive passage-relative token index.")
    answer_end: int = Field(ge=0, description="Inclusive passage-relative token index.")


class GenRecord(BaseModel):
    source: list[str] = Field(min_length=1)
    target: list[str] = Field(min_length=1)
