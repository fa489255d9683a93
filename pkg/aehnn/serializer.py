"""
Serialization utilities for run artifacts.

Converts pydantic models, enums, numpy arrays/scalars and paths to JSON-native
values, and writes the JSON / JSON-lines documents of a run directory.
"""

import json
from enum import Enum
from pathlib import Path

import numpy as np
from pydantic import BaseModel


def serialize_value(value):
    """
    Recursively convert a value into JSON-native types.

    Handles:
    - pydantic BaseModel → dict
    - Enum → its value
    - numpy arrays → lists, numpy scalars → Python scalars
    - Path → str
    - lists, tuples and dicts, recursively
    """
    if isinstance(value, BaseModel):
        return serialize_value(value.model_dump())
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [serialize_value(item) for item in value]
    if isinstance(value, dict):
        return {str(k): serialize_value(v) for k, v in value.items()}
    return value


def dumps(value) -> str:
    """Deterministic JSON text (sorted keys, fixed indent, trailing newline)."""
    return json.dumps(serialize_value(value), indent=2, sort_keys=True) + "\n"


def write_json(path: str | Path, value) -> None:
    Path(path).write_text(dumps(value))


def read_json(path: str | Path):
    return json.loads(Path(path).read_text())


def jsonl_line(model: BaseModel) -> str:
    return model.model_dump_json() + "\n"


def read_jsonl(path: str | Path, model: type[BaseModel]) -> list:
    """Parse a JSON-lines file into models, skipping blank lines."""
    lines = Path(path).read_text().splitlines()
    return [model.model_validate_json(line) for line in lines if line.strip()]
