"""Comma-separated numeric tables with unit-annotated headers.

Header cells look like ``name [unit]``; the unit part is optional. Every
data row must be numeric. Output formatting is fixed so reruns produce
byte-identical files.
"""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np

_HEADER_RE = re.compile(r"^\s*([^\[\]]+?)\s*(?:\[(.*)\])?\s*$")


class TableError(ValueError):
    """Unreadable, malformed or schema-violating table."""


def _fmt(x, fmt):
    if isinstance(x, (str, bool, np.bool_)):
        return str(int(x)) if isinstance(x, (bool, np.bool_)) else x
    x = float(x)
    if np.isnan(x):
        return "nan"
    return format(x, fmt)


def write_table(path, columns, units=None, fmt=".12g", comments=()):
    """Write ``columns`` (name -> 1-D sequence) as CSV.

    ``units`` maps column names to unit strings for the header.
    """
    units = units or {}
    names = list(columns)
    data = [list(columns[n]) for n in names]
    n = len(data[0]) if data else 0
    if any(len(col) != n for col in data):
        raise ValueError("all columns must have the same length")
    header = [f"{name} [{units[name]}]" if units.get(name) else name for name in names]
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            w.writerow([_fmt(col[i], fmt) for col in data])
    return path


def read_table(path, required=()):
    """Read a table written by :func:`write_table` (or by hand).

    Returns
    -------
    columns : dict
        Column name -> float array.
    units : dict
        Column name -> unit string ('' when absent).

    Raises
    ------
    TableError
        Empty file, ragged or non-numeric rows (with the line number), or a
        missing required column.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise TableError(f"{path}: cannot read ({exc.strerror})") from None
    rows = []
    header = None
    header_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        cells = next(csv.reader([raw]))
        if header is None:
            header = cells
            header_line = lineno
            continue
        if len(cells) != len(header):
            raise TableError(
                f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            bad = next(c for c in cells if not _is_float(c))
            raise TableError(f"{path}:{lineno}: non-numeric value {bad!r}") from None
    if header is None:
        raise TableError(f"{path}: empty file, no header row")
    names, units = [], {}
    for cell in header:
        m = _HEADER_RE.match(cell)
        if not m:
            raise TableError(f"{path}:{header_line}: bad header cell {cell!r}")
        names.append(m.group(1))
        units[m.group(1)] = m.group(2) or ""
    if len(set(names)) != len(names):
        raise TableError(f"{path}:{header_line}: duplicate column names")
    missing = [c for c in required if c not in names]
    if missing:
        raise TableError(f"{path}: missing required column(s): {', '.join(missing)}")
    arr = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return {name: arr[:, i] for i, name in enumerate(names)}, units


def _is_float(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_keyvalue(path, items, fmt=".12g"):
    """Key-value report, one ``key = value`` per line, in insertion order."""
    with Path(path).open("w") as fh:
        for key, val in items.items():
            fh.write(f"{key} = {_fmt(val, fmt) if not isinstance(val, str) else val}\n")
    return Path(path)
