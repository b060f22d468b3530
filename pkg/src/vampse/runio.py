"""Run artifacts: trajectory CSVs and JSON metadata/reports.

Every output file embeds the config hash, master seed, and software
version.  CSVs carry them on a single leading '#'-comment line (data rows
below it are plain RFC-4180 fields); JSON files carry a "meta" object.
Floats are written with repr (shortest round-trip), so replaying a command
with the same config and seed reproduces files byte-identically.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os

from .engine import TRAJECTORY_COLUMNS, Trajectory
from .errors import ConfigError
from .state_evolution import MacroState


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


def make_meta(version: str, cfg_hash: str, master_seed: int, **extra) -> dict:
    meta = {"version": version, "config_hash": cfg_hash, "master_seed": master_seed}
    meta.update(extra)
    return meta


def write_csv(path, meta: dict, header: list[str], rows) -> None:
    """Rows are dicts keyed by header names; missing/NaN values write empty."""
    buf = io.StringIO()
    buf.write("# vampse-meta " + json.dumps(meta, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row.get(k, float("nan"))) for k in header])
    _atomic_write(path, buf.getvalue())


def read_csv(path):
    """Returns (meta, header, rows) with numeric fields parsed, '' -> NaN."""
    with open(path, newline="") as fh:
        first = fh.readline()
        meta = {}
        if first.startswith("# vampse-meta "):
            meta = json.loads(first[len("# vampse-meta "):])
            header_line = fh.readline()
        else:
            header_line = first
        header = next(csv.reader([header_line]))
        rows = []
        for rec in csv.reader(fh):
            row = {}
            for key, raw in zip(header, rec):
                if raw == "":
                    row[key] = float("nan")
                elif key == "t":
                    row[key] = int(raw)
                else:
                    try:
                        row[key] = float(raw)
                    except ValueError:
                        row[key] = raw
            rows.append(row)
    return meta, header, rows


def write_json(path, payload: dict) -> None:
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def trajectory_rows(traj: Trajectory) -> list[dict]:
    return traj.records


def se_trajectory_rows(states: list[MacroState]) -> list[dict]:
    """SE states in the engine's trajectory schema (d has no SE analogue)."""
    rows = []
    for t, s in enumerate(states, start=1):
        rows.append({
            "t": t,
            "m1x": s.m1x, "q1x": s.q1x, "chi1x": s.chi1x,
            "m1z": s.m1z, "q1z": s.q1z, "chi1z": s.chi1z,
            "m2x": s.m2x, "q2x": s.q2x, "chi2x": s.chi2x,
            "m2z": s.m2z, "q2z": s.q2z, "chi2z": s.chi2z,
            "d": float("nan"),
            "Qh1x": s.qh1x, "Qh1z": s.qh1z, "Qh2x": s.qh2x, "Qh2z": s.qh2z,
        })
    return rows


def require_columns(header: list[str], needed: list[str], where: str) -> None:
    missing = [c for c in needed if c not in header]
    if missing:
        raise ConfigError(f"{where} is missing columns {missing}")


TRAJECTORY_HEADER = list(TRAJECTORY_COLUMNS)
