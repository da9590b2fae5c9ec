#

from __future__ import annotations

import re
from pathlib import Path
from typing import Mapping

from pydantic import BaseModel, ValidationError

from cpt.exceptions import ConfigError, CorpusFormatError, PathError

_COMMENT = re.compile(r"(?:^|\s)#")


def parse_key_values(text: str, source: str = "<text>") -> dict[str, str]:
    """
    Parse a flat ``key=value`` document. Blank lines are skipped, and so is a
    ``#`` comment at the start of a line or after whitespace; any other ``#``
    belongs to the value.
    """
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _COMMENT.split(raw.strip(), maxsplit=1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise ConfigError(f"{source}:{line_no}: empty key")
        values[key] = value.strip()
    return values


def format_key_values(values: Mapping[str, object]) -> str:
    return "".join(f"{key}={value}\n" for key, value in values.items())


def build(model: type[BaseModel], /, **values):
    """Validate ``values`` into ``model``, reporting failures as ConfigError."""
    try:
        return model(**values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or model.__name__}: {err['msg']}"
            for err in e.errors()
        )
        raise ConfigError(f"{model.__name__}: {problems}") from e


def read_jsonl(path, model: type[BaseModel]) -> list:
    """One ``model`` per non-blank line; a bad line raises CorpusFormatError with its number."""
    path = Path(path)
    if not path.is_file():
        raise PathError(f"{model.__name__} file {path}")
    records = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(model.model_validate_json(line))
            except ValidationError as e:
                first = e.errors()[0]
                where = ".".join(str(p) for p in first["loc"])
                raise CorpusFormatError(line_no, f"{where}: {first['msg']}" if where else first["msg"]) from e
    return records


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(record.model_dump_json() + "\n")
