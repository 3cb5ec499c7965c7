"""Deterministic CSV / key-value text emission.

Floats are rendered with repr (shortest round-trip form) so repeated runs of
the same pipeline produce byte-identical reports.
"""

from __future__ import annotations

import os


def format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "item") and not isinstance(v, (str, bytes)):
        item = v.item()
        return repr(item) if isinstance(item, float) else str(item)
    return str(v)


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_keyvalues(path, pairs) -> None:
    """Write ``key = value`` lines; accepts a dict or an iterable of pairs."""
    items = pairs.items() if hasattr(pairs, "items") else pairs
    lines = [f"{k} = {format_value(v)}" for k, v in items]
    _atomic_write(path, "\n".join(lines) + "\n")


def _atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
