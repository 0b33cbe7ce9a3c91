"""Field dumps, CSV tables and run manifests.

Field dumps are ``.npz`` archives with a JSON ``header`` (format version,
dimension, shape, periodic flags, kind, eps), one ``faces_<axis>`` array per
axis, the cell ``mask``, the snapshot ``times`` and ``values`` of shape
``(n_snapshots,) + shape`` (NaN in obstacle cells).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

DUMP_VERSION = 1
FLOAT_FMT = ".12e"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), FLOAT_FMT)
    return str(v)


def write_csv(path, columns):
    """Write a dict of equal-length columns (insertion order kept)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    rows = zip(*(list(np.atleast_1d(columns[k])) for k in names))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_rows(path, rows, header):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row.get(k, "")) for k in header])
    return path


def write_checks(path, checks):
    """One row per named check: ``passed``, measured ``value`` and ``threshold``."""
    return write_csv(path, {
        "check": list(checks),
        "passed": [c["passed"] for c in checks.values()],
        "value": [c["value"] for c in checks.values()],
        "threshold": [c["threshold"] for c in checks.values()],
    })


def read_csv(path):
    with Path(path).open() as fh:
        return list(csv.DictReader(fh))


def report_columns(report):
    cols = dict(report.columns())
    for k, v in report.energy.items():
        cols[f"energy_{k}"] = v
    return cols


def write_field_dump(path, grid, times, values, *, kind="field", eps=None, snapshots=None):
    """Save snapshots of a cell field; ``values`` has shape ``(n_t,) + grid.shape``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if snapshots is not None:
        times, values = times[snapshots], values[snapshots]
    header = dict(version=DUMP_VERSION, kind=kind, ndim=grid.ndim, shape=list(grid.shape),
                  periodic=list(grid.periodic), eps=eps, snapshots=int(times.size))
    arrays = {f"faces_{a}": f for a, f in enumerate(grid.faces)}
    np.savez_compressed(path, header=np.asarray(json.dumps(header, sort_keys=True)), mask=grid.active,
                        times=times, values=values, **arrays)
    return path


def read_field_dump(path):
    with np.load(path) as data:
        header = json.loads(str(data["header"]))
        faces = [data[f"faces_{a}"] for a in range(header["ndim"])]
        return header, faces, data["mask"], data["times"], data["values"]


def snapshot_indices(n_times, every):
    idx = list(range(0, n_times, max(1, int(every))))
    if idx[-1] != n_times - 1:
        idx.append(n_times - 1)
    return idx


def write_manifest(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)
