"""Operational shell: configuration, CSV ingestion, Monte Carlo experiments and the CLI."""

from .config import (
    DEFAULTS,
    ExperimentConfig,
    estimator_config_from,
    experiment_config_from,
    load_config,
    parse_config_text,
    resolve_config,
    simulation_config_from,
)
from .ingest import drop_summary, ingest_csv
from .montecarlo import RecoveryCell, RecoveryReport, RunRecord, emit_report, load_report, run_montecarlo

__all__ = [
    "DEFAULTS",
    "ExperimentConfig",
    "RecoveryCell",
    "RecoveryReport",
    "RunRecord",
    "drop_summary",
    "emit_report",
    "estimator_config_from",
    "experiment_config_from",
    "ingest_csv",
    "load_config",
    "load_report",
    "parse_config_text",
    "resolve_config",
    "run_montecarlo",
    "simulation_config_from",
]
