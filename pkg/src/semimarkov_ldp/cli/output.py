"""Table writers: comma-delimited with a header row, or JSON lines."""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Iterable, Sequence

import numpy as np


def format_number(v) -> str:
    """Twelve significant digits; ``inf``, ``-inf`` and ``nan`` as literals."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v + 0.0, ".12g")


def format_label(x) -> str:
    if isinstance(x, tuple):
        return "(" + ",".join(format_label(c) for c in x) + ")"
    if isinstance(x, (float, np.floating)):
        return format_number(x)
    return str(x)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_number(v)
    if isinstance(v, (dict, list)):
        return json.dumps(_json_value(v))
    return format_label(v)


def _json_value(v):
    if v is None or isinstance(v, (bool, np.bool_)):
        return None if v is None else bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        s = format_number(v)
        return float(s) if math.isfinite(float(v)) else s
    if isinstance(v, dict):
        return {format_label(k): _json_value(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_json_value(x) for x in v]
    return format_label(v)


def render(rows: Sequence[dict], fmt: str, columns: Iterable[str] | None = None) -> str:
    """Render ``rows`` as CSV (``fmt="csv"``) or JSON lines (``fmt="records"``)."""
    if fmt == "records":
        return "".join(json.dumps({k: _json_value(v) for k, v in r.items()}) + "\n" for r in rows)
    cols = list(columns) if columns is not None else list(dict.fromkeys(k for r in rows for k in r))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()
