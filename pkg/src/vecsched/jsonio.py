"""Deterministic JSON emission for all file artifacts.

The stock ``json`` module prints floats with ``repr`` (shortest round-trip),
which varies in digit count. Every file this package writes goes through
``dumps`` below so floats always carry 17 significant digits and repeated
runs produce byte-identical output.
"""

from __future__ import annotations

import json
import math
from typing import Any

import numpy as np


def format_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite float in JSON output: {x!r}")
    s = format(float(x), ".17g")
    # keep a float marker so round-trips preserve the type
    if "." not in s and "e" not in s and "E" not in s:
        s += ".0"
    return s


def dumps(obj: Any, indent: int | None = None) -> str:
    out: list[str] = []
    _emit(obj, out, indent, 0)
    return "".join(out)


def dump(obj: Any, path, indent: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj, indent=indent))
        fh.write("\n")


def loads(text: str) -> Any:
    return json.loads(text)


def load(path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _emit(obj: Any, out: list[str], indent: int | None, depth: int) -> None:
    nl, pad, pad_in = "", "", ""
    if indent is not None:
        nl = "\n"
        pad = " " * (indent * depth)
        pad_in = " " * (indent * (depth + 1))

    if obj is None or isinstance(obj, bool):
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{" + nl)
        for i, (k, v) in enumerate(obj.items()):
            if not isinstance(k, str):
                raise TypeError(f"JSON object keys must be strings, got {k!r}")
            out.append(pad_in + json.dumps(k) + (": " if indent else ":"))
            _emit(v, out, indent, depth + 1)
            if i < len(obj) - 1:
                out.append("," + nl)
        out.append(nl + pad + "}")
    elif isinstance(obj, (list, tuple)) or isinstance(obj, np.ndarray):
        items = list(obj)
        if not items:
            out.append("[]")
            return
        out.append("[" + nl)
        for i, v in enumerate(items):
            out.append(pad_in)
            _emit(v, out, indent, depth + 1)
            if i < len(items) - 1:
                out.append("," + nl)
        out.append(nl + pad + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} to JSON")
