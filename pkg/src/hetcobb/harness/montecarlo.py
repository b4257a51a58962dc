"""Monte Carlo recovery experiments and their reports."""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError, DataError, HetCobbError, PreconditionError
from ..identification import OracleExpectations, run_pipeline
from ..simulator import simulate_cross_section
from ..variants import get_variant
from .config import ExperimentConfig, substream_seed

__all__ = [
    "ORACLE_TOLERANCE",
    "RecoveryCell",
    "RunRecord",
    "RecoveryReport",
    "run_montecarlo",
    "emit_report",
    "load_report",
]

ORACLE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class RecoveryCell:
    """Recovery of one coefficient at one sample size, across replications.

    ``median_bias`` and ``median_rmse`` are medians over replications of the
    per-replication mean error and root mean squared error, computed over
    firms where that coefficient's estimate is available (its stage was not
    trimmed). A cell is NaN only when no replication produced any estimate. The ``*_rate`` fields
    are mean fractions of firms carrying each flag.
    """

    coefficient: str
    n: int
    median_bias: float
    median_rmse: float
    trimmed_rate: float
    clamped_rate: float
    ridge_rate: float


@dataclass(frozen=True)
class RunRecord:
    """Flag counts of one (sample size, replication) run."""

    n: int
    replication: int
    seed: int
    trimmed: int
    clamped: int
    ridge: int


@dataclass
class RecoveryReport:
    """Aggregated results of :func:`run_montecarlo`.

    ``config`` is the resolved configuration echo. ``oracle_check`` records
    the oracle-mode exactness check run on the first replication of every
    sample size: the maximum absolute error and whether it is within
    :data:`ORACLE_TOLERANCE`. ``runtime`` holds wall-clock seconds; it is
    not part of the deterministic report files unless asked for.
    """

    config: dict
    cells: list[RecoveryCell]
    runs: list[RunRecord]
    oracle_check: dict
    metrics: tuple[str, ...] = ("bias", "rmse", "coverage_of_flags")
    runtime: dict = field(default_factory=dict)

    def cell(self, coefficient: str, n: int) -> RecoveryCell:
        for c in self.cells:
            if c.coefficient == coefficient and c.n == n:
                return c
        raise KeyError((coefficient, n))

    def rmse_table(self) -> dict[str, dict[int, float]]:
        out: dict[str, dict[int, float]] = {}
        for c in self.cells:
            out.setdefault(c.coefficient, {})[c.n] = c.median_rmse
        return out

    @property
    def oracle_passed(self) -> bool:
        return bool(self.oracle_check.get("passed", False))


def _errors(est, ds, names):
    truth = ds.truth_betas()
    bias, rmse = {}, {}
    for c in names:
        err = est.betas[c] - truth[c]
        err = err[np.isfinite(err)]
        if err.size == 0:
            bias[c] = rmse[c] = float("nan")
        else:
            bias[c] = float(np.mean(err))
            rmse[c] = float(np.sqrt(np.mean(err * err)))
    return bias, rmse


def _median(values) -> float:
    """Median over replications that produced a value (NaN if none did)."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    return float(np.median(v)) if v.size else float("nan")


def _one_run(exp: ExperimentConfig, size_index: int, rep: int):
    n = exp.sample_sizes[size_index]
    seed = substream_seed(exp.seed, size_index, rep)
    sim = exp.simulation.with_(n_firms=n, seed=seed)
    names = get_variant(exp.estimator.model_variant).coefficients
    try:
        ds = simulate_cross_section(sim)
        oracle = OracleExpectations(sim.technology, sim.eta_sigma) if exp.oracle_mode else None
        est = run_pipeline(ds, exp.estimator, oracle=oracle)
        bias, rmse = _errors(est, ds, names)
        flags = est.flag_counts()
        oracle_err = None
        if rep == 0:
            check = est if exp.oracle_mode else run_pipeline(
                ds, exp.estimator, oracle=OracleExpectations(sim.technology, sim.eta_sigma)
            )
            truth = ds.truth_betas()
            oracle_err = max(float(np.max(np.abs(check.betas[c] - truth[c]))) for c in names)
    except HetCobbError as exc:
        raise type(exc)(f"n={n}, replication={rep}: {exc}") from exc
    record = RunRecord(n, rep, seed, flags["trimmed"], flags["clamped"], flags["ridge"])
    return size_index, rep, bias, rmse, record, oracle_err


def run_montecarlo(config: ExperimentConfig) -> RecoveryReport:
    """Simulate, estimate and score every (sample size, replication) pair.

    Each run draws from its own substream of ``config.seed``, so results do
    not depend on execution order or on ``n_jobs``.
    """
    t0 = time.perf_counter()
    jobs = [(i, r) for i in range(len(config.sample_sizes)) for r in range(config.n_replications)]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(_one_run, [config] * len(jobs), *zip(*jobs)))
    else:
        results = [_one_run(config, i, r) for i, r in jobs]
    results.sort(key=lambda t: (t[0], t[1]))

    names = get_variant(config.estimator.model_variant).coefficients
    cells: list[RecoveryCell] = []
    runs: list[RunRecord] = []
    oracle_errors = {}
    for i, n in enumerate(config.sample_sizes):
        mine = [res for res in results if res[0] == i]
        recs = [res[4] for res in mine]
        runs.extend(recs)
        rates = {
            key: float(np.mean([getattr(r, key) for r in recs]) / n) for key in ("trimmed", "clamped", "ridge")
        }
        for c in names:
            cells.append(RecoveryCell(
                coefficient=c,
                n=n,
                median_bias=_median([res[2][c] for res in mine]),
                median_rmse=_median([res[3][c] for res in mine]),
                trimmed_rate=rates["trimmed"],
                clamped_rate=rates["clamped"],
                ridge_rate=rates["ridge"],
            ))
        oracle_errors[str(n)] = next(res[5] for res in mine if res[1] == 0)
    worst = max(oracle_errors.values())
    elapsed = time.perf_counter() - t0
    return RecoveryReport(
        config=dict(config.echo),
        cells=cells,
        runs=runs,
        oracle_check={"max_abs_error": oracle_errors, "tolerance": ORACLE_TOLERANCE,
                      "passed": bool(worst <= ORACLE_TOLERANCE)},
        metrics=tuple(config.metrics),
        runtime={"total_seconds": elapsed, "runs": len(jobs),
                 "seconds_per_run": elapsed / len(jobs)},
    )


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

_METRIC_COLUMNS = {
    "bias": ("median_bias",),
    "rmse": ("median_rmse",),
    "coverage_of_flags": ("trimmed_rate", "clamped_rate", "ridge_rate"),
}


def _report_dict(report: RecoveryReport, include_runtime: bool) -> dict:
    out = {
        "config": dict(sorted(report.config.items())),
        "metrics": list(report.metrics),
        "cells": [vars(c).copy() for c in report.cells],
        "runs": [vars(r).copy() for r in report.runs],
        "oracle_check": report.oracle_check,
    }
    if include_runtime:
        out["runtime"] = report.runtime
    return out


def emit_report(report: RecoveryReport, format: str, path, include_runtime: bool = False) -> None:
    """Write a report as ``json`` (everything, with config echo) or ``csv``.

    The CSV has one row per (coefficient, sample size) cell and the metric
    columns selected in the experiment. Floats are written in shortest
    round-trip form, so re-reading reproduces every value bit for bit.
    Wall-clock runtimes are left out unless ``include_runtime``, keeping
    the files a deterministic function of the configuration.
    """
    if not report.cells:
        raise PreconditionError("refusing to emit a report without cells")
    path = Path(path)
    if format == "json":
        text = json.dumps(_report_dict(report, include_runtime), indent=2, sort_keys=False) + "\n"
        path.write_text(text)
    elif format == "csv":
        cols = [c for m in report.metrics for c in _METRIC_COLUMNS[m]]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["coefficient", "n", *cols])
            for cell in report.cells:
                w.writerow([cell.coefficient, cell.n, *(repr(float(getattr(cell, c))) for c in cols)])
    else:
        raise ConfigError(f"unknown report format {format!r}; expected 'json' or 'csv'")


def load_report(path) -> RecoveryReport:
    """Read a JSON report written by :func:`emit_report`."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
        return RecoveryReport(
            config=data["config"],
            cells=[RecoveryCell(**c) for c in data["cells"]],
            runs=[RunRecord(**r) for r in data["runs"]],
            oracle_check=data["oracle_check"],
            metrics=tuple(data.get("metrics", ("bias", "rmse", "coverage_of_flags"))),
            runtime=data.get("runtime", {}),
        )
    except OSError as exc:
        raise DataError(f"cannot read report {path}: {exc.strerror}") from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: not a recovery report ({exc})") from None
