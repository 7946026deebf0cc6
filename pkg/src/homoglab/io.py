"""Table output with stable formatting.

Floats are written with 17 significant digits so every binary double
round-trips; the column order is fixed by the caller, so reruns produce
identical bytes.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from pathlib import Path

import numpy as np

from .errors import ContractViolation, HomoglabError

__all__ = ["OutputError", "emit_table", "format_value", "to_jsonable"]


class OutputError(HomoglabError, OSError):
    """Writing an output file failed."""


def format_value(v):
    """CSV cell text: 17 significant digits for floats, lowercase booleans."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def to_jsonable(v):
    """Plain JSON types; non-finite floats become None."""
    if isinstance(v, dict):
        return {str(k): to_jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [to_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return to_jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if v is None or isinstance(v, str):
        return v
    return str(v)


def _as_dict(row):
    if dataclasses.is_dataclass(row) and not isinstance(row, type):
        return {f.name: getattr(row, f.name) for f in dataclasses.fields(row)}
    if isinstance(row, dict):
        return row
    raise ContractViolation(f"table rows must be dicts or dataclasses, got {type(row).__name__}")


def emit_table(rows, fmt, path, columns=None):
    """Write ``rows`` to ``path`` as CSV or JSON.

    ``columns`` fixes the field order (and the header of an empty table);
    otherwise the keys of the first row are used.  Every row must carry the
    same fields.  Raises :class:`OutputError` on IO failure.
    """
    if fmt not in ("csv", "json"):
        raise ContractViolation(f"table format must be 'csv' or 'json', got {fmt!r}")
    dicts = [_as_dict(r) for r in rows]
    if columns is None:
        if not dicts:
            raise ContractViolation("an empty table needs explicit columns")
        columns = list(dicts[0])
    columns = list(columns)
    for k, d in enumerate(dicts):
        if set(d) != set(columns):
            raise ContractViolation(f"row {k} has fields {sorted(d)}, expected {sorted(columns)}")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for d in dicts:
            w.writerow([format_value(d[c]) for c in columns])
        text = buf.getvalue()
    else:
        text = json.dumps([{c: to_jsonable(d[c]) for c in columns} for d in dicts], indent=2) + "\n"
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
