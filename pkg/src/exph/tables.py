"""Plain-text tables and JSON documents with byte-stable formatting."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = ["fmt", "write_node_table", "read_node_table", "write_rows", "write_json", "jsonable"]


def fmt(x: float) -> str:
    """17 significant digits: enough to round-trip a double."""
    return format(float(x), ".17g")


def write_node_table(path: Path, values: np.ndarray, columns: Sequence[str]) -> None:
    """One row per grid node (C order): node indices then ``values[node, :]``."""
    dims = values.shape[:-1]
    flat = values.reshape(-1, values.shape[-1])
    header = [f"i{a}" for a in range(len(dims))] + list(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for node, row in zip(np.ndindex(*dims), flat):
            w.writerow([*node, *(fmt(v) for v in row)])


def read_node_table(path: Path, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`write_node_table` for a grid of shape ``dims``."""
    dims = tuple(int(n) for n in dims)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty table")
    header, body = rows[0], rows[1:]
    nidx = sum(1 for h in header if h.startswith("i") and h[1:].isdigit())
    if nidx != len(dims):
        raise ValueError(f"{path}: table has {nidx} index columns, grid has {len(dims)} axes")
    if len(body) != math.prod(dims):
        raise ValueError(f"{path}: {len(body)} rows for a grid with {math.prod(dims)} nodes")
    ncomp = len(header) - nidx
    out = np.empty(dims + (ncomp,))
    for row in body:
        node = tuple(int(v) for v in row[:nidx])
        if any(not 0 <= i < n for i, n in zip(node, dims)):
            raise ValueError(f"{path}: node {node} outside grid {dims}")
        out[node] = [float(v) for v in row[nidx:]]
    return out


def write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path: Path, doc: dict) -> None:
    text = json.dumps(jsonable(doc), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")
