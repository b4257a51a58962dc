"""Column store for a cross-section of firms."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .exceptions import DataError, SchemaError
from .variants import Variant, get_variant

__all__ = ["Dataset", "TRUTH_PREFIX"]

TRUTH_PREFIX = "true_"


@dataclass
class Dataset:
    """Observed columns of a firm cross-section, optionally with hidden truth.

    Columns are 1-D float arrays of equal length. Hidden simulation truth is
    kept in columns prefixed ``true_``; ingested real data never carries them.
    ``meta`` holds scalars the simulator knows but data does not (for example
    the shock scale ``eta_sigma``), used only by oracle mode.
    """

    columns: dict[str, np.ndarray]
    variant: str = "baseline"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = {}
        n = None
        for name, values in self.columns.items():
            arr = np.asarray(values, dtype=float).reshape(-1)
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise DataError(f"column {name!r} has {arr.shape[0]} rows, expected {n}")
            cols[name] = arr
        self.columns = cols
        get_variant(self.variant)

    def __len__(self) -> int:
        return next(iter(self.columns.values())).shape[0] if self.columns else 0

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"dataset has no column {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    @property
    def model_variant(self) -> Variant:
        return get_variant(self.variant)

    @property
    def has_truth(self) -> bool:
        return any(c.startswith(TRUTH_PREFIX) for c in self.columns)

    def observables(self) -> "Dataset":
        """Copy without hidden truth columns or simulator metadata."""
        cols = {k: v.copy() for k, v in self.columns.items() if not k.startswith(TRUTH_PREFIX)}
        return Dataset(cols, self.variant)

    def subset(self, index) -> "Dataset":
        return Dataset({k: v[index] for k, v in self.columns.items()}, self.variant, dict(self.meta))

    def with_columns(self, **new: Iterable[float]) -> "Dataset":
        cols = dict(self.columns)
        cols.update({k: np.asarray(v, dtype=float) for k, v in new.items()})
        return Dataset(cols, self.variant, dict(self.meta))

    def require(self, names: Iterable[str]) -> None:
        missing = [c for c in names if c not in self.columns]
        if missing:
            raise SchemaError(
                f"variant {self.variant!r} needs column(s) {', '.join(missing)}"
            )

    def truth_betas(self) -> dict[str, np.ndarray]:
        return {
            name: self[f"{TRUTH_PREFIX}beta_{name}"]
            for name in self.model_variant.coefficients
        }

    def to_csv(self, path, with_truth: bool = False) -> None:
        names = [c for c in self.columns if with_truth or not c.startswith(TRUTH_PREFIX)]
        write_columns_csv(path, {c: self.columns[c] for c in names})

    @classmethod
    def from_mapping(cls, data: Mapping[str, Iterable[float]], variant: str = "baseline") -> "Dataset":
        return cls({k: np.asarray(v, dtype=float) for k, v in data.items()}, variant)


def _cell(value: float) -> str:
    if float(value).is_integer() and abs(value) < 2**53:
        return str(int(value))
    return repr(float(value))


def write_columns_csv(path, columns: Mapping[str, np.ndarray]) -> None:
    """Write float columns with shortest round-trip formatting."""
    names = list(columns)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        n = len(next(iter(columns.values()))) if names else 0
        for i in range(n):
            w.writerow([_cell(columns[c][i]) for c in names])
