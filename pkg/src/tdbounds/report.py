"""Deterministic JSON/CSV serialization.

Floats are written with 17 significant digits so values round-trip exactly.
Non-finite floats become the strings ``"inf"``, ``"-inf"`` and ``"nan"``
because strict JSON has no literal for them.
"""
import csv
import dataclasses
import io
import json
import math
from pathlib import Path

import numpy as np


def _float_text(x):
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    s = format(x, ".17g")
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def to_plain(obj):
    """Convert dataclasses, numpy values and tuples into JSON-ready Python."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if f.repr}
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps(obj, indent=2):
    """Canonical JSON text: sorted keys, fixed float format, trailing newline."""
    out = io.StringIO()

    def write(v, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(v, dict):
            if not v:
                out.write("{}")
                return
            out.write("{\n")
            for i, k in enumerate(sorted(v)):
                out.write(pad + json.dumps(k) + ": ")
                write(v[k], level + 1)
                out.write(",\n" if i < len(v) - 1 else "\n")
            out.write(end + "}")
        elif isinstance(v, list):
            if not v:
                out.write("[]")
            elif all(not isinstance(x, (dict, list)) for x in v):
                out.write("[")
                for i, x in enumerate(v):
                    if i:
                        out.write(", ")
                    write(x, level + 1)
                out.write("]")
            else:
                out.write("[\n")
                for i, x in enumerate(v):
                    out.write(pad)
                    write(x, level + 1)
                    out.write(",\n" if i < len(v) - 1 else "\n")
                out.write(end + "]")
        elif isinstance(v, bool) or v is None or isinstance(v, (int, str)):
            out.write(json.dumps(v))
        elif isinstance(v, float):
            out.write(_float_text(v))
        else:
            raise TypeError(f"cannot serialize {type(v).__name__}")

    write(to_plain(obj), 0)
    out.write("\n")
    return out.getvalue()


def _cell(v):
    v = to_plain(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".16e")
    if v is None:
        return ""
    return str(v)


def csv_text(rows, columns=None):
    """CSV with a mandatory header. ``rows`` is a sequence of dicts."""
    rows = [to_plain(r) for r in rows]
    if columns is None:
        if not rows:
            raise ValueError("cannot infer CSV columns from zero rows")
        columns = list(rows[0])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def emit(report, path, fmt):
    """Write ``report`` to ``path`` as ``"json"`` or ``"csv"`` (list of row dicts)."""
    if fmt == "json":
        text = dumps(report)
    elif fmt == "csv":
        text = csv_text(report)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    Path(path).write_text(text)


def load_json(path):
    """Inverse of the JSON side of :func:`emit` (non-finite strings restored)."""

    def restore(v):
        if isinstance(v, dict):
            return {k: restore(x) for k, x in v.items()}
        if isinstance(v, list):
            return [restore(x) for x in v]
        if v in ("inf", "-inf", "nan"):
            return float(v)
        return v

    return restore(json.loads(Path(path).read_text()))
