"""Panel CSV and JSON report I/O."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .kernels import TimeSeriesPanel

SCHEMA_VERSION = "1.0"


def fmt(x: float) -> str:
    """Shortest round-trip representation; identical across runs and platforms."""
    return repr(float(x))


def write_panel_csv(panel: TimeSeriesPanel, path) -> None:
    """Header of channel names, then one comma-separated row per time index."""
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(panel.channel_names)
        for row in panel.values:
            w.writerow([fmt(v) for v in row])


def read_panel_csv(path) -> TimeSeriesPanel:
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        names = [h.strip() for h in header]
        if not names or any(not n for n in names):
            raise DataError(f"{path}: line 1: header must name every channel")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names):
                raise DataError(f"{path}: line {line_no}: expected {len(names)} fields, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise DataError(f"{path}: line {line_no}: non-numeric field in {row!r}") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}: line {line_no}: non-finite value")
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return TimeSeriesPanel(np.array(rows), tuple(names))


def write_json(obj, path) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **obj}
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False, allow_nan=True)
        fh.write("\n")


def write_rows_csv(rows: list[dict], path, columns: list[str] | None = None) -> None:
    columns = columns or (list(rows[0]) if rows else [])
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])


def _cell(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return v
