#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Named-array checkpoint container.

Binary layout, little-endian throughout::

    magic   b"CPTARR01"
    count   uint32
    record* kind uint8 (0 array, 1 alias)
            name_len uint32, name utf-8
            array: rank uint32, dims uint64 * rank, values float64 * prod(dims)
            alias: target_len uint32, target utf-8

Next to ``<name>.ckpt`` a ``<name>.cfg`` sidecar carries the ModelConfig
fields as ``key=value`` lines, optimizer scalars under ``optim.`` and free
run metadata under ``run.``.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from cpt.exceptions import DataError, PathError
from cpt.models import build, format_key_values, parse_key_values
from cpt.models.config import ModelConfig
from cpt.network import ALIASES, CPTParams
from cpt.optim import AdamState
from cpt.tensor import Tensor

log = logging.getLogger("cpt")

MAGIC = b"CPTARR01"
KIND_ARRAY, KIND_ALIAS = 0, 1
OPTIM_FIELDS = ("peak_lr", "warmup_steps", "total_steps", "beta1", "beta2", "weight_decay", "eps", "step")


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".cfg")


def _pack_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_container(path, arrays: Mapping[str, np.ndarray], aliases: Mapping[str, str] | None = None):
    aliases = aliases or {}
    for alias, target in aliases.items():
        if target not in arrays:
            raise DataError(f"alias {alias} points at unknown array {target}")
    chunks = [MAGIC, struct.pack("<I", len(arrays) + len(aliases))]
    for name, values in arrays.items():
        values = np.ascontiguousarray(values, dtype="<f8")
        chunks.append(struct.pack("<B", KIND_ARRAY) + _pack_name(name))
        chunks.append(struct.pack("<I", values.ndim))
        chunks.append(np.asarray(values.shape, dtype="<u8").tobytes())
        chunks.append(values.tobytes())
    for alias, target in aliases.items():
        chunks.append(struct.pack("<B", KIND_ALIAS) + _pack_name(alias) + _pack_name(target))
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise DataError(f"truncated checkpoint {self.path} at byte {self.offset}")
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (length,) = self.unpack("<I")
        return self.take(length).decode("utf-8")


def read_container(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Returns ``(arrays, aliases)`` exactly as written."""
    path = Path(path)
    if not path.is_file():
        raise PathError(f"checkpoint {path}")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise DataError(f"{path} is not a checkpoint container")
    (count,) = reader.unpack("<I")
    arrays, aliases = {}, {}
    for _ in range(count):
        (kind,) = reader.unpack("<B")
        name = reader.name()
        if kind == KIND_ARRAY:
            (rank,) = reader.unpack("<I")
            dims = tuple(int(d) for d in np.frombuffer(reader.take(8 * rank), dtype="<u8"))
            size = int(np.prod(dims)) if dims else 1
            values = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(dims)
            arrays[name] = values.astype(np.float64)
        elif kind == KIND_ALIAS:
            aliases[name] = reader.name()
        else:
            raise DataError(f"unknown record kind {kind} for {name} in {path}")
    if reader.offset != len(reader.data):
        raise DataError(f"{len(reader.data) - reader.offset} trailing bytes in {path}")
    return arrays, aliases


def save_checkpoint(path, params: CPTParams, adam_state: AdamState | None = None, run: Mapping[str, object] | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: t.values for name, t in params.named_arrays().items()}
    meta = dict(params.config.model_dump())
    if adam_state is not None:
        for name, m in adam_state.m.items():
            arrays[f"optim.m.{name}"] = m
            arrays[f"optim.v.{name}"] = adam_state.v[name]
        meta.update({f"optim.{k}": getattr(adam_state, k) for k in OPTIM_FIELDS})
    meta.update({f"run.{k}": v for k, v in (run or {}).items()})
    write_container(path, arrays, params.aliases)
    sidecar_path(path).write_text(format_key_values(meta), encoding="utf-8")
    log.info(f"saved checkpoint {path} ({len(params.arrays)} arrays)")


def read_config(path) -> tuple[ModelConfig, dict[str, str], dict[str, str]]:
    """Parse the sidecar into (model config, optimizer scalars, run metadata)."""
    side = sidecar_path(path)
    if not side.is_file():
        raise PathError(f"checkpoint config {side}")
    values = parse_key_values(side.read_text(encoding="utf-8"), str(side))
    optim = {k[len("optim."):]: v for k, v in values.items() if k.startswith("optim.")}
    run = {k[len("run."):]: v for k, v in values.items() if k.startswith("run.")}
    model = {k: v for k, v in values.items() if "." not in k}
    return build(ModelConfig, **model), optim, run


def load_checkpoint(path) -> tuple[CPTParams, AdamState | None, dict[str, str]]:
    config, optim, run = read_config(path)
    arrays, aliases = read_container(path)
    for alias, target in aliases.items():
        if ALIASES.get(alias) != target:
            raise DataError(f"alias {alias} -> {target} does not match the model's tying")
    model_arrays = {n: Tensor.parameter(v, name=n) for n, v in arrays.items() if not n.startswith("optim.")}
    params = CPTParams(config, model_arrays)

    adam_state = None
    if optim:
        adam_state = AdamState(
            peak_lr=float(optim["peak_lr"]),
            warmup_steps=int(optim["warmup_steps"]),
            total_steps=int(optim["total_steps"]),
            beta1=float(optim["beta1"]),
            beta2=float(optim["beta2"]),
            weight_decay=float(optim["weight_decay"]),
            eps=float(optim["eps"]),
            step=int(optim["step"]),
        )
        for name, values in arrays.items():
            if name.startswith("optim.m."):
                adam_state.m[name[len("optim.m."):]] = values.copy()
            elif name.startswith("optim.v."):
                adam_state.v[name[len("optim.v."):]] = values.copy()
    log.info(f"loaded checkpoint {path}")
    return params, adam_state, run
