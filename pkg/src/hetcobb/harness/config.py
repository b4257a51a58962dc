"""Flat ``dotted.key = value`` configuration files.

One setting per line, ``#`` starts a comment, blank lines are ignored::

    # sample design
    simulation.n_firms = 2000
    technology.variant = two_labor
    experiment.sample_sizes = 1000, 8000

Keys are grouped by their first component: ``simulation``, ``technology``,
``estimator`` and ``experiment``. :data:`DEFAULTS` documents every key.
Technology coefficients default to the canonical test technology of the
selected variant; if any ``technology.beta_*`` key is given, all of the
variant's coefficients must be.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from ..exceptions import ConfigError
from ..identification import EPANECHNIKOV_RULE_CONSTANT, EstimatorConfig
from ..simulator import SimulationConfig
from ..smoother import BandwidthSpec
from ..technology import TechnologySpec, tech_a, technology_from_config
from ..variants import get_variant

__all__ = [
    "DEFAULTS",
    "parse_config_text",
    "load_config",
    "format_config",
    "resolve_config",
    "technology_from",
    "simulation_config_from",
    "estimator_config_from",
    "ExperimentConfig",
    "experiment_config_from",
]

# key -> (default, description)
DEFAULTS: dict[str, tuple[str, str]] = {
    "simulation.n_firms": ("1000", "firms per simulated cross-section"),
    "simulation.eta_sigma": ("0.1", "standard deviation of the normal output shock"),
    "simulation.seed": ("0", "seed of the simulated cross-section"),
    "simulation.state_law": ("normal", "law of predetermined log inputs: normal or uniform"),
    "simulation.state_mean": ("0.0", "mean of predetermined log inputs"),
    "simulation.state_sd": ("0.5", "standard deviation of predetermined log inputs"),
    "simulation.state_corr": ("0.3", "pairwise correlation of predetermined log inputs"),
    "simulation.state_box": ("2.5", "truncation half-width, in standard deviations"),
    "simulation.omega_persistence": ("0.0", "weight of the lagged latent draw in omega"),
    "simulation.state_omega_loading": ("0.0", "shift of state means per unit lagged omega"),
    "simulation.log_price_mean": ("0.0", "mean of log prices"),
    "simulation.log_price_sd": ("0.0", "standard deviation of log prices (0: unit prices)"),
    "simulation.observe_prices": ("false", "write price columns into the observables"),
    "technology.family": ("affine", "coefficient family: affine or logistic"),
    "technology.variant": ("baseline", "model variant"),
    "technology.support": ("0.0, 1.0", "latent technology support (lo, hi[, lo2, hi2])"),
    "estimator.kernel": ("epanechnikov", "kernel: epanechnikov or gaussian"),
    "estimator.bandwidth_rule": ("rule_of_thumb", "rule_of_thumb or loo_cv"),
    "estimator.bandwidth_constant": (repr(EPANECHNIKOV_RULE_CONSTANT), "rule-of-thumb multiplier"),
    "estimator.cv_subsample_size": ("500", "held-out rows for cross-validation"),
    "estimator.min_ess": ("15.0", "trim threshold on the kernel-weight sum"),
    "estimator.share_eps": ("0.01", "shares are clamped into (eps, 1 - eps)"),
    "estimator.prices_are_unit": ("true", "read log quantities from costs"),
    "estimator.winsorize_quantile": ("none", "cap output value at this quantile in the share stage"),
    "estimator.ratio_conditioning": ("all", "condition on all ratios or only the first"),
    "estimator.density_floor": ("0.05", "locality floor, relative to the median density"),
    "estimator.spread_floor": ("0.05", "locality floor on relative conditional spread"),
    "experiment.n_replications": ("20", "Monte Carlo replications per sample size"),
    "experiment.sample_sizes": ("1000, 8000", "strictly increasing sample sizes"),
    "experiment.seed": ("0", "root seed of the Monte Carlo substreams"),
    "experiment.metrics": ("bias, rmse, coverage_of_flags", "columns of the CSV report"),
    "experiment.oracle_mode": ("false", "substitute analytic conditional expectations"),
    "experiment.n_jobs": ("1", "worker processes for replications"),
    "experiment.output_json": ("", "path of the JSON report (empty: none)"),
    "experiment.output_csv": ("", "path of the CSV report (empty: none)"),
}

_SECTIONS = ("simulation", "technology", "estimator", "experiment")
METRICS = ("bias", "rmse", "coverage_of_flags")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        _check_key(key, f"{source}:{lineno}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _check_key(key: str, where: str) -> None:
    section = key.split(".", 1)[0]
    if "." not in key or section not in _SECTIONS:
        raise ConfigError(f"{where}: key {key!r} must start with one of {', '.join(_SECTIONS)}")
    if key in DEFAULTS:
        return
    if section == "technology" and key.split(".", 1)[1] in {"kappa", "center"} | _beta_keys():
        return
    raise ConfigError(f"{where}: unknown key {key!r}")


def _beta_keys() -> set[str]:
    return {"beta_l", "beta_lu", "beta_k", "beta_m1", "beta_m2", "beta_m3", "beta_0"}


def load_config(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def format_config(cfg: Mapping[str, str]) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def resolve_config(overrides: Mapping[str, str] | None = None) -> dict[str, str]:
    """Every key with its effective value, as strings.

    The returned mapping is the configuration echo written into reports; it
    rebuilds the same run through :func:`experiment_config_from`.
    """
    overrides = dict(overrides or {})
    for key in overrides:
        _check_key(key, "override")
    cfg = {k: v for k, (v, _) in DEFAULTS.items()}
    cfg.update(overrides)
    variant = cfg["technology.variant"]
    get_variant(variant)
    if not any(k.startswith("technology.beta_") for k in overrides):
        if cfg["technology.family"] != "affine" or "technology.support" in overrides:
            raise ConfigError("non-default technology family or support needs explicit technology.beta_* keys")
        cfg.update(tech_a(variant).to_config())
    # round-trip through the typed objects so bad values fail here, not mid-run
    technology_from(cfg)
    simulation_config_from(cfg)
    estimator_config_from(cfg)
    experiment_config_from(cfg)
    return dict(sorted(cfg.items()))


# ---------------------------------------------------------------------------
# typed views
# ---------------------------------------------------------------------------

def _get(cfg, key):
    return cfg.get(key, DEFAULTS[key][0] if key in DEFAULTS else None)


def _as_int(cfg, key) -> int:
    raw = _get(cfg, key)
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if not value.is_integer():
        raise ConfigError(f"{key}: expected an integer, got {raw!r}")
    return int(value)


def _as_float(cfg, key) -> float:
    raw = _get(cfg, key)
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{key}: expected a finite number, got {raw!r}")
    return value


def _as_bool(cfg, key) -> bool:
    raw = str(_get(cfg, key)).strip().lower()
    if raw in ("true", "yes", "1", "on"):
        return True
    if raw in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected true or false, got {raw!r}")


def _as_list(cfg, key) -> list[str]:
    return [p.strip() for p in str(_get(cfg, key)).split(",") if p.strip()]


def technology_from(cfg: Mapping[str, str]) -> TechnologySpec:
    try:
        return technology_from_config(cfg)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"technology: {exc}") from None


def simulation_config_from(cfg: Mapping[str, str], technology: TechnologySpec | None = None) -> SimulationConfig:
    tech = technology or technology_from(cfg)
    try:
        return SimulationConfig(
            technology=tech,
            n_firms=_as_int(cfg, "simulation.n_firms"),
            eta_sigma=_as_float(cfg, "simulation.eta_sigma"),
            seed=_as_int(cfg, "simulation.seed"),
            state_law=str(_get(cfg, "simulation.state_law")),
            state_mean=_as_float(cfg, "simulation.state_mean"),
            state_sd=_as_float(cfg, "simulation.state_sd"),
            state_corr=_as_float(cfg, "simulation.state_corr"),
            state_box=_as_float(cfg, "simulation.state_box"),
            omega_persistence=_as_float(cfg, "simulation.omega_persistence"),
            state_omega_loading=_as_float(cfg, "simulation.state_omega_loading"),
            log_price_mean=_as_float(cfg, "simulation.log_price_mean"),
            log_price_sd=_as_float(cfg, "simulation.log_price_sd"),
            observe_prices=_as_bool(cfg, "simulation.observe_prices"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"simulation: {exc}") from None


def estimator_config_from(cfg: Mapping[str, str]) -> EstimatorConfig:
    rule = str(_get(cfg, "estimator.bandwidth_rule"))
    try:
        bw = BandwidthSpec(
            rule=rule,
            cv_subsample_size=_as_int(cfg, "estimator.cv_subsample_size"),
            constant=_as_float(cfg, "estimator.bandwidth_constant"),
        )
        if rule == "fixed":
            raise ConfigError("estimator.bandwidth_rule must be rule_of_thumb or loo_cv")
        wq = str(_get(cfg, "estimator.winsorize_quantile")).strip().lower()
        return EstimatorConfig(
            model_variant=str(_get(cfg, "technology.variant")),
            kernel=str(_get(cfg, "estimator.kernel")),
            share_bandwidth=bw,
            slope_bandwidth=bw,
            level_bandwidth=bw,
            min_ess=_as_float(cfg, "estimator.min_ess"),
            share_eps=_as_float(cfg, "estimator.share_eps"),
            prices_are_unit=_as_bool(cfg, "estimator.prices_are_unit"),
            winsorize_quantile=None if wq in ("none", "") else _as_float(cfg, "estimator.winsorize_quantile"),
            ratio_conditioning=str(_get(cfg, "estimator.ratio_conditioning")),
            density_floor=_as_float(cfg, "estimator.density_floor"),
            spread_floor=_as_float(cfg, "estimator.spread_floor"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"estimator: {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """A Monte Carlo recovery experiment.

    ``simulation.n_firms`` and ``simulation.seed`` are overridden per run:
    each (sample size, replication) pair draws its own cross-section from a
    substream of ``seed``.
    """

    simulation: SimulationConfig
    estimator: EstimatorConfig
    n_replications: int = 20
    sample_sizes: tuple[int, ...] = (1000, 8000)
    metrics: tuple[str, ...] = METRICS
    seed: int = 0
    oracle_mode: bool = False
    n_jobs: int = 1
    output_json: str = ""
    output_csv: str = ""
    echo: Mapping[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.n_replications < 1:
            raise ConfigError("n_replications must be at least 1")
        sizes = tuple(int(s) for s in self.sample_sizes)
        if not sizes or any(s < 1 for s in sizes) or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigError("sample_sizes must be positive and strictly increasing")
        object.__setattr__(self, "sample_sizes", sizes)
        bad = [m for m in self.metrics if m not in METRICS]
        if bad or not self.metrics:
            raise ConfigError(f"metrics must be a non-empty subset of {METRICS}, got {list(self.metrics)}")
        if self.n_jobs < 1:
            raise ConfigError("n_jobs must be at least 1")
        if self.simulation.variant != self.estimator.model_variant:
            raise ConfigError(
                f"technology variant {self.simulation.variant!r} does not match "
                f"estimator variant {self.estimator.model_variant!r}"
            )


def experiment_config_from(cfg: Mapping[str, str]) -> ExperimentConfig:
    try:
        sizes = tuple(int(s) for s in _as_list(cfg, "experiment.sample_sizes"))
    except ValueError:
        raise ConfigError(f"experiment.sample_sizes: expected integers, got {_get(cfg, 'experiment.sample_sizes')!r}") from None
    return ExperimentConfig(
        simulation=simulation_config_from(cfg),
        estimator=estimator_config_from(cfg),
        n_replications=_as_int(cfg, "experiment.n_replications"),
        sample_sizes=sizes,
        metrics=tuple(_as_list(cfg, "experiment.metrics")),
        seed=_as_int(cfg, "experiment.seed"),
        oracle_mode=_as_bool(cfg, "experiment.oracle_mode"),
        n_jobs=_as_int(cfg, "experiment.n_jobs"),
        output_json=str(_get(cfg, "experiment.output_json")),
        output_csv=str(_get(cfg, "experiment.output_csv")),
        echo=dict(cfg),
    )


def substream_seed(root: int, *coords: int) -> int:
    """Independent integer seed for the run at ``coords`` under ``root``."""
    return int(np.random.SeedSequence([int(root), *map(int, coords)]).generate_state(1, np.uint64)[0] >> 1)
