#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
File-backed managers for run artifacts: checkpoints and the metrics stream.
"""

from __future__ import annotations

import csv
import logging
import os
from multiprocessing import RLock
from pathlib import Path

from cpt.checkpoint import load_checkpoint, save_checkpoint
from cpt.exceptions import PathError
from cpt.models.reports import MetricsRow

log = logging.getLogger("cpt")


class CheckpointManager:
    """Writes ``step_<n>.ckpt`` files into one directory and finds the latest."""

    lock = RLock()

    def __init__(self, directory, every: int = 0):
        self.directory = Path(directory)
        self.every = every
        with CheckpointManager.lock:
            self.directory.mkdir(parents=True, exist_ok=True)

    def path_for(self, step: int) -> Path:
        return self.directory / f"step_{step:06d}.ckpt"

    def due(self, step: int) -> bool:
        return self.every > 0 and step % self.every == 0

    def save(self, step: int, params, adam_state=None, **run) -> Path:
        path = self.path_for(step)
        with CheckpointManager.lock:
            save_checkpoint(path, params, adam_state, {"step": step, **run})
        return path

    def saved(self) -> list[Path]:
        return sorted(self.directory.glob("step_*.ckpt"))

    def latest(self) -> Path:
        saved = self.saved()
        if not saved:
            raise PathError(f"no checkpoint in {self.directory}")
        return saved[-1]

    def load_latest(self):
        with CheckpointManager.lock:
            return load_checkpoint(self.latest())


class MetricsWriter:
    """Appends rows of ``step,task,loss,lr,wall_ms`` to a CSV file."""

    lock = RLock()
    columns = list(MetricsRow.model_fields)

    def __init__(self, filename):
        self.filename = Path(filename)
        with MetricsWriter.lock:
            if self.filename.parent != Path(""):
                self.filename.parent.mkdir(parents=True, exist_ok=True)
            with open(self.filename, "w", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(self.columns)

    def write(self, row: MetricsRow):
        with MetricsWriter.lock:
            with open(self.filename, "a", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(row.csv_values())
        log.debug(f"metrics {row}")

    def read(self) -> list[MetricsRow]:
        return read_metrics(self.filename)


def read_metrics(filename) -> list[MetricsRow]:
    if not os.path.isfile(filename):
        raise PathError(f"metrics file {filename}")
    with MetricsWriter.lock:
        with open(filename, newline="") as f:
            return [MetricsRow(**row) for row in csv.DictReader(f)]
