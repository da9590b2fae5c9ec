#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Error hierarchy. Every error carries the process exit code the CLI maps it to:

0 success, 1 unexpected, 3 config, 4 path, 5 data, 6 numeric, 7 bench.
"""


from __future__ import annotations


class CptError(Exception):
    exit_code = 1

    def __init__(self, message=""):
        self.message = f"Generic Error {message}"
        super().__init__(self.message)


class ConfigError(CptError):
    exit_code = 3

    def __init__(self, message=""):
        self.message = f"Invalid configuration {message}"
        Exception.__init__(self, self.message)


class PathError(CptError):
    exit_code = 4

    def __init__(self, message=""):
        self.message = f"Unresolvable path {message}"
        Exception.__init__(self, self.message)


class DataError(CptError):
    exit_code = 5

    def __init__(self, message=""):
        self.message = f"Invalid data {message}"
        Exception.__init__(self, self.message)


class CorpusFormatError(DataError):
    def __init__(self, line_no: int, message=""):
        self.line_no = line_no
        self.message = f"Malformed corpus line {line_no}: {message}"
        Exception.__init__(self, self.message)


class IndexLookupError(DataError):
    def __init__(self, what: str, index: int, limit: int):
        self.index = index
        self.message = f"{what} index {index} out of range [0, {limit})"
        Exception.__init__(self, self.message)


class SequenceTooLongError(DataError):
    def __init__(self, length: int, limit: int):
        self.message = f"Sequence of length {length} exceeds max_positions={limit}"
        Exception.__init__(self, self.message)


class BatchError(DataError):
    def __init__(self, message=""):
        self.message = f"Cannot batch {message}"
        Exception.__init__(self, self.message)


class TrainingExampleError(DataError):
    def __init__(self, message=""):
        self.message = f"Invalid training example {message}"
        Exception.__init__(self, self.message)


class VocabularyMismatchError(DataError):
    def __init__(self, message=""):
        self.message = f"Vocabulary mismatch {message}"
        Exception.__init__(self, self.message)


class ShapeError(DataError):
    def __init__(self, message=""):
        self.message = f"Shape mismatch {message}"
        Exception.__init__(self, self.message)


class DecodeCacheError(DataError):
    def __init__(self, message=""):
        self.message = f"Inconsistent decode cache {message}"
        Exception.__init__(self, self.message)


class NumericError(CptError):
    exit_code = 6

    def __init__(self, message=""):
        self.message = f"Numeric abort {message}"
        Exception.__init__(self, self.message)


class BenchError(CptError):
    exit_code = 7

    def __init__(self, message=""):
        self.message = f"Benchmark refused {message}"
        Exception.__init__(self, self.message)
