"""Module responsible for JSON serialization of results.

Output is deterministic: keys are sorted, numpy values are converted to plain
python numbers and non finite floats are written as the strings "inf",
"-inf" and "nan" so that files stay valid JSON.
"""
import json
import math
import typing as t
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel


def _float(value: float) -> t.Union[float, str]:
    if math.isfinite(value):
        return value
    if math.isnan(value):
        return "nan"
    return "inf" if value > 0 else "-inf"


def jsonable(v: t.Any) -> t.Any:
    """Convert dataclasses, pydantic models and numpy values into JSON compatible objects."""
    if isinstance(v, BaseModel):
        return jsonable(v.model_dump())
    if is_dataclass(v) and not isinstance(v, type):
        return jsonable(asdict(v))
    if isinstance(v, dict):
        return {str(key): jsonable(value) for key, value in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(item) for item in v]
    if isinstance(v, np.ndarray):
        return jsonable(v.tolist())
    if isinstance(v, np.generic):
        return jsonable(v.item())
    if isinstance(v, bool) or v is None or isinstance(v, (int, str)):
        return v
    if isinstance(v, float):
        return _float(v)
    if isinstance(v, Path):
        return v.as_posix()
    raise TypeError(f"Object of type {type(v).__name__} is not JSON serializable")


def dumps(v: t.Any, *, indent: bool = True, sort_keys: bool = True) -> str:
    """Serialize Python objects to a JSON string."""
    return json.dumps(
        jsonable(v),
        indent=2 if indent else None,
        sort_keys=sort_keys,
        allow_nan=False,
    )


def dump(v: t.Any, *, indent: bool = True, sort_keys: bool = True) -> bytes:
    """Serialize Python objects to JSON bytes, terminated by a newline."""
    return (dumps(v, indent=indent, sort_keys=sort_keys) + "\n").encode("utf-8")
