"""Deterministic CSV/JSON artifacts.

Floats are written with ``repr`` (shortest round-trip form), so a rerun with
the same configuration and seed reproduces every byte.  Every file carries
the configuration hash and the seed: JSON files as keys, CSV files as a
leading ``#`` comment line followed by the header row.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .flow import FlowConfig, FlowTrajectory
from .geometry import TargetManifold
from .grid import DomainGrid
from .maps import DiscreteMap


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "nan" if np.isnan(value) else repr(value)
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def _meta_line(meta):
    return "# " + " ".join(f"{k}={v}" for k, v in meta.items())


def write_csv(path, header, rows, meta):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(_meta_line(meta) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """Return (metadata dict, header, rows as lists of str)."""
    meta = {}
    with Path(path).open(encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            for item in line[1:].split():
                if "=" in item:
                    key, value = item.split("=", 1)
                    meta[key] = value
        elif line:
            body.append(line)
    rows = list(csv.reader(body))
    return meta, rows[0], rows[1:]


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, data, meta):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(data)
    payload.update(meta)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n",
                    encoding="utf-8")
    return path


def write_trajectory(path, traj: FlowTrajectory, lambda1, meta):
    """Columns t, energy, tension_l2, lambda1 (empty where not tracked)."""
    lam = np.full(len(traj), np.nan) if lambda1 is None else lambda1
    rows = [(t, e, n, None if np.isnan(l) else l)
            for t, e, n, l in zip(traj.times, traj.energy, traj.tension_l2, lam)]
    return write_csv(path, ["t", "energy", "tension_l2", "lambda1"], rows, meta)


def read_trajectory(path):
    meta, header, rows = read_csv(path)
    cols = {name: [] for name in header}
    for row in rows:
        for name, value in zip(header, row):
            cols[name].append(float(value) if value not in ("", "nan") else np.nan)
    return meta, {k: np.asarray(v) for k, v in cols.items()}


def write_snapshot(path, f: DiscreteMap, t, meta):
    """One sample map: node multi-index, domain coordinates and chart values."""
    grid = f.grid
    header_meta = dict(meta)
    header_meta["t"] = repr(float(t))
    header_meta["target"] = json.dumps(f.target.to_dict(), separators=(",", ":"), sort_keys=True)
    header_meta["grid"] = json.dumps(grid.to_dict(), separators=(",", ":"), sort_keys=True)
    header_meta["winding"] = json.dumps(f.winding.tolist(), separators=(",", ":"))
    idx_names = [f"i{a}" for a in range(grid.ndim)]
    x_names = [f"x{a}" for a in range(grid.ndim)]
    y_names = [f"y{c}" for c in range(f.target.dim)]
    mesh = grid.mesh()
    rows = []
    for idx in np.ndindex(*grid.shape):
        rows.append(list(idx) + [float(v) for v in mesh[idx]] + [float(v) for v in f.values[idx]])
    return write_csv(path, idx_names + x_names + y_names, rows, header_meta)


def read_snapshot(path):
    """Rebuild the :class:`DiscreteMap` (and its time) from a snapshot CSV."""
    meta, header, rows = read_csv(path)
    target = TargetManifold.from_dict(json.loads(meta["target"]))
    grid = DomainGrid.from_dict(json.loads(meta["grid"]))
    winding = np.asarray(json.loads(meta["winding"]), dtype=float)
    ycols = [i for i, name in enumerate(header) if name.startswith("y")]
    icols = [i for i, name in enumerate(header) if name.startswith("i")]
    values = np.empty(grid.shape + (target.dim,))
    for row in rows:
        idx = tuple(int(row[i]) for i in icols)
        values[idx] = [float(row[i]) for i in ycols]
    return DiscreteMap(grid, target, values, winding), float(meta.get("t", "nan")), meta


def snapshot_name(k):
    return f"snapshot_{k:05d}.csv"


def load_trajectory_dir(root):
    """Reassemble a :class:`FlowTrajectory` from a run directory.

    Only the samples that were written as snapshots are present; the
    trajectory is marked converged when its last tension is at or below the
    recorded stop tolerance.
    """
    root = Path(root)
    files = sorted((root / "snapshots").glob("snapshot_*.csv"))
    if not files:
        raise FileNotFoundError(f"no snapshots under {root / 'snapshots'}")
    scen = json.loads((root / "scenario.json").read_text(encoding="utf-8"))
    _, traj_cols = read_trajectory(root / "trajectory.csv")
    maps, times = [], []
    f = None
    for path in files:
        f, t, _ = read_snapshot(path)
        maps.append(f.values)
        times.append(t)
    times = np.asarray(times)
    full_t = traj_cols["t"]
    pick = np.searchsorted(full_t, times)
    pick = np.clip(pick, 0, len(full_t) - 1)
    flow = FlowConfig(**scen["flow"])
    tension = traj_cols["tension_l2"][pick]
    return FlowTrajectory(
        grid=f.grid, target=f.target, winding=f.winding, config=flow, times=times,
        energy=traj_cols["energy"][pick], tension_l2=tension, maps=maps,
        converged=bool(tension[-1] <= flow.stop_tolerance), steps=0,
        meta={"scenario": scen},
    ), scen
