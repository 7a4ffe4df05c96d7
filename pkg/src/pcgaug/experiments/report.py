"""Write experiment outputs: ``summary.md``, per-run CSVs and a replay config."""

from __future__ import annotations

import csv
import os

import numpy as np

from .config import write_replay

SUMMARY_HEADER = "# Experiment summary\n\n| run | item | metric | value |\n|---|---|---|---|\n"


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def _short(v):
    if isinstance(v, (float, np.floating)) and not isinstance(v, bool):
        return f"{float(v):.6g}"
    s = _cell(v)
    return s if len(s) <= 60 else s[:57] + "..."


def write_table(rows, path):
    """Rows (dicts) to CSV; columns in first-seen order, floats at full precision."""
    cols = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in cols])


def emit_report(outputs, out_dir, timing=False):
    """Write every run in ``outputs`` under ``out_dir``; return the written paths.

    Trace CSVs omit the ``elapsed_ns`` column unless ``timing`` is set, so a
    rerun from ``config.replay.toml`` reproduces every file byte for byte.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    lines = [SUMMARY_HEADER]
    used = {}
    for out in outputs:
        used[out.name] = used.get(out.name, 0) + 1
        stem = out.name if used[out.name] == 1 else f"{out.name}_{used[out.name]}"
        run_dir = os.path.join(out_dir, stem)
        os.makedirs(run_dir, exist_ok=True)
        for row in out.summary:
            lines.append(f"| {stem} | {row['item']} | {row['metric']} | {_short(row['value'])} |\n")
        for name, rows in sorted(out.tables.items()):
            path = os.path.join(run_dir, f"{name}.csv")
            write_table(rows, path)
            written.append(path)
        for name, trace in sorted(out.traces.items()):
            path = os.path.join(run_dir, f"trace_{name}.csv")
            trace.write_csv(path, timing=timing)
            written.append(path)
        path = os.path.join(run_dir, "summary.csv")
        write_table(out.summary, path)
        written.append(path)
    path = os.path.join(out_dir, "summary.md")
    with open(path, "w") as fh:
        fh.write("".join(lines))
    written.append(path)
    path = os.path.join(out_dir, "config.replay.toml")
    write_replay([o.config for o in outputs], path)
    written.append(path)
    return written
