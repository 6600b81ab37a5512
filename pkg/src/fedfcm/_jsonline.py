"""Deterministic JSON rendering with 17-significant-digit floats.

``json.dumps`` writes the shortest repr of a float; the wire format and the
federation log instead pin every real to ``%.17g`` so files are stable
byte-for-byte across platforms and always round-trip binary64 exactly.
"""

import json
import math

import numpy as np


def format_real(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"non-finite real cannot be serialized: {x!r}")
    return format(x, ".17g")


def dumps(obj) -> str:
    """Render ``obj`` as compact JSON, keeping dict insertion order."""
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_real(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k), ensure_ascii=False)}:{dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _parse_int(literal: str):
    # format_real renders -0.0 as "-0"; keep the sign
    return -0.0 if literal == "-0" else int(literal)


def loads(text: str):
    return json.loads(text, parse_int=_parse_int)
