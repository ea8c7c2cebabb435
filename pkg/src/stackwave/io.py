"""CSV and JSON artifacts.

Fields: first row holds the y coordinates (after a ``t\\y`` label), first
column holds t.  Controls: two columns ``t,w``.  Nodal vectors: ``y,value``.
Floats are written with 17 significant digits so files round-trip exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .discretization import SpaceTimeField

_FMT = "{:.17g}"


def _fmt(x):
    return _FMT.format(float(x))


def write_field(path, field):
    g = field.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t\\y"] + [_fmt(y) for y in g.y])
        for t, row in zip(g.t, field.values):
            w.writerow([_fmt(t)] + [_fmt(v) for v in row])


def read_field(path, grid=None):
    """Read a field; returns ``(y, t, values)`` or a field when ``grid`` is given."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: empty field file")
    y = np.array([float(v) for v in rows[0][1:]])
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    t, values = data[:, 0], data[:, 1:]
    if grid is None:
        return y, t, values
    if values.shape != (grid.nt + 1, grid.nx + 1):
        raise ValueError(f"{path}: shape {values.shape} does not match the grid")
    return SpaceTimeField(values, grid)


def write_control(path, t, samples):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "w"])
        for ti, wi in zip(t, samples):
            w.writerow([_fmt(ti), _fmt(wi)])


def read_control(path):
    """Return ``(t, w)`` arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["t", "w"]:
        raise ValueError(f"{path}: expected a 't,w' header")
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    if data.size == 0:
        raise ValueError(f"{path}: no samples")
    return data[:, 0], data[:, 1]


def write_vector(path, y, values, name="value"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", name])
        for yi, vi in zip(y, values):
            w.writerow([_fmt(yi), _fmt(vi)])


def read_vector(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return data[:, 0], data[:, 1]


def write_terminal(path, y, pair):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "position", "velocity"])
        for row in zip(y, pair.position, pair.velocity):
            w.writerow([_fmt(v) for v in row])


def read_terminal(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return data[:, 0], data[:, 1], data[:, 2]


def write_json(path, payload):
    """Deterministic JSON: sorted keys, fixed float formatting."""
    Path(path).write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
