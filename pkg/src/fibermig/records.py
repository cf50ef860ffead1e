"""CSV writers with a fixed 17-digit float format and deterministic row order."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_csv(rows: Iterable[Sequence], header: Sequence[str], path) -> Path:
    """Write ``rows`` under ``header``; an empty iterable gives a header-only file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def _index_columns(n: int) -> list[str]:
    return ["x_index"] if n == 1 else ["x_index", "y_index"]


def field_rows(times, fields, n: int):
    """Rows ``t, x_index[, y_index], value`` in time-major then x order."""
    for t, f in zip(times, fields):
        f = np.asarray(f)
        for idx in np.ndindex(f.shape):
            yield (float(t), *idx, float(f[idx]))


def write_field_snapshots(times, fields, n: int, value_name: str, path) -> Path:
    return write_csv(field_rows(times, fields, n), ["t", *_index_columns(n), value_name], path)


def kinetic_rows(times, states, n: int):
    for t, c in zip(times, states):
        for idx in np.ndindex(c.shape):
            yield (float(t), *idx, float(c[idx]))


def write_kinetic_snapshots(times, states, n: int, path) -> Path:
    header = ["t", *_index_columns(n), "s_index", "theta_index", "value"]
    return write_csv(kinetic_rows(times, states, n), header, path)


def read_field_snapshots(path, shape: tuple) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_field_snapshots` for a known spatial shape."""
    header, rows = read_csv(path)
    data = np.array([[float(v) for v in r] for r in rows]) if rows else np.zeros((0, len(header)))
    times = np.unique(data[:, 0]) if len(data) else np.zeros(0)
    fields = np.zeros((times.size,) + tuple(shape))
    nidx = len(shape)
    for r in data:
        k = int(np.searchsorted(times, r[0]))
        fields[(k, *r[1:1 + nidx].astype(int))] = r[-1]
    return times, fields
