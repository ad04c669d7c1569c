"""Column-table CSV output at 12 significant digits."""

from __future__ import annotations

import csv
import io
import os

import numpy as np


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.12g" % float(v)
    return str(v)


def format_csv(table: dict) -> str:
    """RFC-4180 text for a dict of equal-length columns (header row first)."""
    names = list(table)
    cols = [list(table[n]) for n in names]
    lengths = {len(c) for c in cols}
    if len(lengths) > 1:
        raise ValueError(f"columns have different lengths: {sorted(lengths)}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in zip(*cols):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def emit_csv(table: dict, path) -> str:
    text = format_csv(table)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(text)
    return str(path)


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def read_csv(path) -> dict:
    """Inverse of ``emit_csv``; numeric cells come back as int or float."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ValueError(f"{path}: empty file")
    names = rows[0]
    out = {n: [] for n in names}
    for r in rows[1:]:
        for n, v in zip(names, r):
            out[n].append(_parse(v))
    return out
