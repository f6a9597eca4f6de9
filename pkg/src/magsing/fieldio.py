"""Field serialization: row-major CSV body plus a JSON header sidecar."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .geometry import PeriodicGrid

INDEX_NAMES = ("i", "j")


def _fmt(v: float) -> str:
    return repr(float(v))


def write_field(path, grid: PeriodicGrid, values, kind: str = "scalar", names=None) -> Path:
    """Write ``values`` (shape ``grid.shape + comp``) to ``path`` (.csv).

    The header lands next to it as ``<stem>.json``.  Floats are written with
    ``repr`` so a read-back reproduces them exactly.
    """
    path = Path(path)
    values = np.asarray(values, dtype=float)
    comp = values.shape[grid.dim:]
    flat = values.reshape(grid.size, -1)
    ncomp = flat.shape[1]
    names = list(names) if names is not None else (
        ["value"] if ncomp == 1 else [f"c{k}" for k in range(ncomp)]
    )
    idx = np.array(list(np.ndindex(*grid.shape)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(INDEX_NAMES[: grid.dim]) + names)
        for row_idx, row in zip(idx, flat):
            w.writerow([int(i) for i in row_idx] + [_fmt(v) for v in row])
    header = {"dim": grid.dim, "n": grid.n, "kind": kind, "components": list(comp), "columns": names}
    path.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return path


def read_field(path):
    """Inverse of :func:`write_field`; returns ``(grid, values, header)``."""
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    grid = PeriodicGrid(header["dim"], header["n"])
    comp = tuple(header["components"])
    values = np.empty(grid.shape + (int(np.prod(comp, dtype=int)),))
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            idx = tuple(int(v) for v in row[: grid.dim])
            values[idx] = [float(v) for v in row[grid.dim:]]
    return grid, values.reshape(grid.shape + comp), header
