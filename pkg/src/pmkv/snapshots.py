"""Snapshot persistence.

CSV: header ``period,particle,x_1..x_d,reflection_cum``, one row per particle per
period, floats written with ``repr`` so they round-trip exactly.

Binary: the same table as little-endian float64, row-major, with a JSON sidecar
(``<file>.json``) recording the column names and row count.
"""

import csv
import json
from pathlib import Path

import numpy as np

from .engine import Ensemble


def _columns(dim):
    return ["period", "particle"] + [f"x_{i + 1}" for i in range(dim)] + ["reflection_cum"]


def snapshot_table(snapshots):
    rows = []
    for p, ens in enumerate(snapshots):
        n = ens.n
        block = np.column_stack([np.full(n, p, dtype=float), np.arange(n, dtype=float),
                                 ens.positions, ens.reflection])
        rows.append(block)
    return np.concatenate(rows, axis=0)


def write_csv(path, snapshots):
    path = Path(path)
    dim = snapshots[0].dim
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_columns(dim))
        for p, ens in enumerate(snapshots):
            for i in range(ens.n):
                w.writerow([p, i] + [repr(float(v)) for v in ens.positions[i]] + [repr(float(ens.reflection[i]))])
    return path


def read_csv(path, period_length=None):
    """Read snapshots back as a list of ensembles (times set from ``period_length`` if given)."""
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r])
    dim = len(header) - 3
    out = []
    for p in np.unique(data[:, 0]).astype(int):
        block = data[data[:, 0] == p]
        block = block[np.argsort(block[:, 1], kind="stable")]
        t = p * period_length if period_length is not None else 0.0
        out.append(Ensemble(block[:, 2:2 + dim], t, block[:, 2 + dim]))
    return out


def write_binary(path, snapshots):
    path = Path(path)
    table = snapshot_table(snapshots)
    path.write_bytes(table.astype("<f8").tobytes(order="C"))
    meta = {"dtype": "<f8", "order": "row-major", "columns": _columns(snapshots[0].dim),
            "rows": int(table.shape[0])}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2) + "\n")
    return path


def read_binary(path):
    meta = json.loads(Path(str(path) + ".json").read_text())
    flat = np.frombuffer(Path(path).read_bytes(), dtype="<f8")
    return flat.reshape(meta["rows"], len(meta["columns"])), meta
