"""Reading firm cross-sections from CSV.

The header must hold every observable the variant needs (see
:attr:`hetcobb.variants.Variant.required_columns`); ``firm_id`` and price
columns are optional. Hidden-truth columns (``true_*``) written by the
simulator are ignored. Any other column is a schema error.

Cells must be numeric. Rows whose output value, cost or price is not
strictly positive are dropped and counted by reason; nothing is dropped
silently.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from pathlib import Path

import numpy as np

from ..dataset import TRUTH_PREFIX, Dataset
from ..exceptions import DataError, SchemaError
from ..variants import get_variant

__all__ = ["ingest_csv", "drop_summary"]


def _reason(column: str) -> str:
    if column == "output_value":
        return "nonpositive output value"
    if column.startswith("cost_"):
        return "nonpositive cost"
    return "nonpositive price"


def ingest_csv(path, variant: str = "baseline", strict: bool = False) -> Dataset:
    """Parse a CSV file into a :class:`Dataset` of observables.

    Parameters
    ----------
    path : path-like
    variant : str
    strict : bool
        Raise on nonpositive values instead of dropping the row.

    Returns
    -------
    Dataset
        ``meta["ingest"]`` holds ``rows_read``, ``rows_kept``,
        ``dropped`` (reason -> count) and ``dropped_lines`` (file line
        numbers with their reason).

    Raises
    ------
    SchemaError
        Missing, duplicate or unexpected columns.
    DataError
        Unreadable file, ragged or non-numeric rows, or no valid row left.
    """
    var = get_variant(variant)
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, no header") from None
        rows = list(reader)

    dupes = sorted(c for c, k in Counter(header).items() if k > 1)
    if dupes:
        raise SchemaError(f"{path}: duplicate column(s) {', '.join(dupes)}")
    missing = [c for c in var.required_columns if c not in header]
    if missing:
        raise SchemaError(
            f"{path}: missing required column(s) {', '.join(missing)} for variant {var.name!r}"
        )
    allowed = set(var.required_columns) | set(var.price_columns) | {"firm_id"}
    extra = [c for c in header if c not in allowed and not c.startswith(TRUTH_PREFIX)]
    if extra:
        raise SchemaError(f"{path}: unexpected column(s) {', '.join(extra)} for variant {var.name!r}")
    keep_cols = [c for c in header if c in allowed]
    positions = {c: header.index(c) for c in keep_cols}
    positive = [c for c in keep_cols if c == "output_value" or c.startswith("cost_") or c.startswith("p_")]

    values = {c: [] for c in keep_cols}
    dropped_lines: list[tuple[int, str]] = []
    n_read = 0
    for offset, row in enumerate(rows):
        line = offset + 2  # header is line 1
        if not row or all(not cell.strip() for cell in row):
            continue
        n_read += 1
        if len(row) != len(header):
            raise DataError(f"{path}: line {line}: expected {len(header)} cells, got {len(row)}")
        parsed = {}
        for c in keep_cols:
            cell = row[positions[c]].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: line {line}, column {c}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: line {line}, column {c}: non-finite value {cell!r}")
            parsed[c] = v
        bad = next((c for c in positive if parsed[c] <= 0), None)
        if bad is not None:
            if strict:
                raise DataError(f"{path}: line {line}, column {bad}: {_reason(bad)} ({parsed[bad]!r})")
            dropped_lines.append((line, _reason(bad)))
            continue
        for c in keep_cols:
            values[c].append(parsed[c])

    kept = n_read - len(dropped_lines)
    if kept == 0:
        raise DataError(f"{path}: no valid rows ({n_read} read, {len(dropped_lines)} dropped)")
    meta = {
        "ingest": {
            "source": str(path),
            "rows_read": n_read,
            "rows_kept": kept,
            "dropped": dict(Counter(reason for _, reason in dropped_lines)),
            "dropped_lines": dropped_lines,
        }
    }
    return Dataset({c: np.asarray(v, dtype=float) for c, v in values.items()}, var.name, meta)


def drop_summary(dataset: Dataset) -> str:
    """One-line human-readable account of ingestion drops."""
    info = dataset.meta.get("ingest")
    if info is None:
        return "no ingestion record"
    n_drop = info["rows_read"] - info["rows_kept"]
    if n_drop == 0:
        return f"read {info['rows_read']} rows, dropped 0"
    reasons = ", ".join(f"{k}: {v}" for k, v in sorted(info["dropped"].items()))
    return f"read {info['rows_read']} rows, dropped {n_drop} ({reasons})"
