"""Firm-level recovery of heterogeneous Cobb-Douglas coefficients.

The recipe, for every model variant:

1. The flexible input cost ratio ``r`` stands in for the latent technology.
2. Each flexible elasticity equals the ex-ante cost share
   ``cost / E[output value | inputs, r]``.
3. Netting flexible inputs out of log output leaves
   ``y_net = sum_j beta_j x_j + beta_0 + eta`` with coefficients that depend
   on ``r`` only, so ``E[y_net | x, r]`` is affine in the predetermined
   inputs ``x`` and its slopes are their elasticities.
4. The intercept is ``E[y_net - sum_j beta_j x_j | x, r]``.

Conditional expectations come from local-linear regression or, in oracle
mode, from the true technology evaluated at the latent value implied by
``r``. Oracle mode isolates the algebra from smoothing error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import TRUTH_PREFIX, Dataset
from .exceptions import ConfigError, DataError, InsufficientDataError, SchemaError
from .simulator import expected_exp_eta
from .smoother import (
    FLAG_OK,
    FLAG_RIDGE,
    FLAG_TRIMMED,
    KERNELS,
    BandwidthSpec,
    LocalFits,
    LocalLinearRegression,
    ProductKernelDensity,
    rule_of_thumb_bandwidth,
    select_bandwidth,
)
from .technology import TechnologySpec, ratio_to_omega
from .variants import Variant, get_variant

__all__ = [
    "EPANECHNIKOV_RULE_CONSTANT",
    "EstimatorConfig",
    "ElasticityEstimates",
    "OracleExpectations",
    "LocalityReport",
    "HeterogeneousCobbDouglas",
    "as_dataset",
    "compute_ratio",
    "build_design",
    "estimate_shares",
    "net_output",
    "estimate_labor_capital",
    "estimate_additive_productivity",
    "run_pipeline",
    "locality_diagnostic",
]

# 1.06 scaled by sqrt(5): an Epanechnikov kernel on [-h, h] has the spread of
# a Gaussian kernel with scale h / sqrt(5)
EPANECHNIKOV_RULE_CONSTANT = 1.06 * math.sqrt(5.0)


def _stage_bandwidth() -> BandwidthSpec:
    return BandwidthSpec(rule="rule_of_thumb", constant=EPANECHNIKOV_RULE_CONSTANT)


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings for the estimation pipeline.

    Attributes
    ----------
    model_variant : str
        ``baseline``, ``two_labor``, ``three_flexible`` or
        ``single_m_flexible_labor``.
    kernel : str
    share_bandwidth, slope_bandwidth, level_bandwidth : BandwidthSpec
        Bandwidth rules of the three regression stages.
    min_ess : float
        Trim threshold on the kernel-weight sum.
    share_eps : float
        Shares are clamped into ``(share_eps, 1 - share_eps)``.
    prices_are_unit : bool
        If true, log quantities are the logs of costs and output value.
        Otherwise price columns ``p_y`` and ``p_<input>`` must be present.
    winsorize_quantile : float or None
        Upper quantile at which the output-value response of the share
        regression is capped. ``None`` disables it.
    ratio_conditioning : {"all", "first"}
        Condition on every cost ratio, or only the first one (a shortcut
        valid for the three-input variant with scalar latent technology).
    density_floor : float
        Locality diagnostic: firms whose density estimate is below this
        fraction of the median density are flagged.
    spread_floor : float
        Locality diagnostic: firms where some predetermined input has local
        conditional spread below this fraction of its overall standard
        deviation are flagged.
    """

    model_variant: str = "baseline"
    kernel: str = "epanechnikov"
    share_bandwidth: BandwidthSpec = field(default_factory=_stage_bandwidth)
    slope_bandwidth: BandwidthSpec = field(default_factory=_stage_bandwidth)
    level_bandwidth: BandwidthSpec = field(default_factory=_stage_bandwidth)
    min_ess: float = 15.0
    share_eps: float = 0.01
    prices_are_unit: bool = True
    winsorize_quantile: float | None = None
    ratio_conditioning: str = "all"
    density_floor: float = 0.05
    spread_floor: float = 0.05

    def __post_init__(self):
        n_flex = len(get_variant(self.model_variant).flexible)
        if not 0 < self.share_eps < 1.0 / (n_flex + 1):
            # every share above eps and their sum below 1 - eps must be feasible
            raise ConfigError(f"share_eps must lie in (0, 1/{n_flex + 1}) for {n_flex} flexible inputs")
        if self.kernel not in KERNELS:
            raise ConfigError(f"unknown kernel {self.kernel!r}; expected one of {KERNELS}")
        if self.min_ess < 0:
            raise ConfigError("min_ess must be nonnegative")
        if self.ratio_conditioning not in ("all", "first"):
            raise ConfigError("ratio_conditioning must be 'all' or 'first'")
        if self.winsorize_quantile is not None and not 0.5 < self.winsorize_quantile < 1:
            raise ConfigError("winsorize_quantile must lie in (0.5, 1)")

    @property
    def variant(self) -> Variant:
        return get_variant(self.model_variant)

    def with_(self, **changes) -> "EstimatorConfig":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------

def as_dataset(X, variant: str = "baseline") -> Dataset:
    """Coerce a Dataset, mapping, DataFrame or 2-D array into a :class:`Dataset`.

    Arrays must hold the variant's required columns in order, optionally
    followed by its price columns.
    """
    if isinstance(X, Dataset):
        return X
    var = get_variant(variant)
    if hasattr(X, "columns") and not isinstance(X, np.ndarray):
        return Dataset({str(c): np.asarray(X[c], dtype=float) for c in X.columns}, var.name)
    if isinstance(X, Mapping):
        return Dataset.from_mapping(X, var.name)
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2:
        raise DataError("expected a 2-D array of firm observables")
    names = list(var.required_columns)
    if arr.shape[1] == len(names) + len(var.price_columns):
        names += list(var.price_columns)
    elif arr.shape[1] != len(names):
        raise SchemaError(
            f"variant {var.name!r} expects columns {names} (optionally followed by "
            f"{list(var.price_columns)}), got {arr.shape[1]} columns"
        )
    return Dataset({c: arr[:, j] for j, c in enumerate(names)}, var.name)


def compute_ratio(cost_num, cost_den):
    """Flexible input cost ratio ``cost_num / cost_den``."""
    a = np.asarray(cost_num, dtype=float)
    b = np.asarray(cost_den, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DataError("costs must be finite")
    if np.any(a <= 0) or np.any(b <= 0):
        raise DataError("costs must be strictly positive")
    out = a / b
    return float(out) if out.ndim == 0 else out


@dataclass
class Design:
    """Derived per-firm quantities shared by every stage."""

    variant: Variant
    state: np.ndarray        # (n, S) predetermined log inputs
    flex: np.ndarray         # (n, F) log flexible quantities
    costs: np.ndarray        # (n, F)
    ratios: np.ndarray       # (n, R) all cost ratios
    used_ratios: np.ndarray  # (n, R') ratios used for conditioning
    output_value: np.ndarray
    y: np.ndarray
    p_y: np.ndarray
    # hidden simulation truth (true_* columns without the prefix); oracle mode only
    truth: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return self.y.shape[0]

    @property
    def share_regressors(self) -> np.ndarray:
        return np.column_stack([self.state, self.flex, self.used_ratios])

    @property
    def slope_regressors(self) -> np.ndarray:
        return np.column_stack([self.state, self.used_ratios])


def build_design(dataset: Dataset, config: EstimatorConfig) -> Design:
    var = config.variant
    if dataset.variant != var.name:
        raise SchemaError(
            f"dataset variant {dataset.variant!r} does not match estimator variant {var.name!r}"
        )
    dataset.require(var.required_columns)
    if not config.prices_are_unit:
        dataset.require(var.price_columns)
    for c in var.required_columns:
        if not np.all(np.isfinite(dataset[c])):
            raise DataError(f"column {c!r} has non-finite values")
    value = dataset["output_value"]
    costs = np.column_stack([dataset[c] for c in var.cost_columns])
    if np.any(value <= 0) or np.any(costs <= 0):
        raise DataError("output value and input costs must be strictly positive")
    state = np.column_stack([dataset[c] for c in var.state_columns])
    if config.prices_are_unit:
        p_y = np.ones(len(dataset))
        flex = np.log(costs)
    else:
        p_y = dataset["p_y"]
        prices = np.column_stack([dataset[f"p_{f}"] for f in var.flexible])
        flex = np.log(costs) - np.log(prices)
    idx = {f: j for j, f in enumerate(var.flexible)}
    ratios = np.column_stack([compute_ratio(costs[:, idx[a]], costs[:, idx[b]]) for a, b in var.ratios])
    used = ratios if config.ratio_conditioning == "all" else ratios[:, :1]
    truth = {c[len(TRUTH_PREFIX):]: v for c, v in dataset.columns.items() if c.startswith(TRUTH_PREFIX)}
    return Design(var, state, flex, costs, ratios, used, value, np.log(value / p_y), p_y, truth)


# ---------------------------------------------------------------------------
# Conditional expectation engines
# ---------------------------------------------------------------------------

class OracleExpectations:
    """Analytic conditional expectations from a known technology.

    The latent value is recovered from the observed cost ratios through the
    technology's inverse ratio map, so the oracle follows the same route as
    the estimator and only replaces smoothing by exact evaluation.

    Parameters
    ----------
    technology : TechnologySpec
    eta_sigma : float
        Scale of the normal output shock, giving ``E[exp(eta)]``.
    """

    @classmethod
    def for_dataset(cls, technology: TechnologySpec, dataset: Dataset) -> "OracleExpectations":
        """Oracle for simulated data, reading the shock scale from its metadata."""
        if "eta_sigma" not in dataset.meta:
            raise DataError("dataset carries no eta_sigma; construct the oracle explicitly")
        return cls(technology, dataset.meta["eta_sigma"])

    def __init__(self, technology: TechnologySpec, eta_sigma: float):
        self.technology = technology
        self.eta_sigma = float(eta_sigma)

    def _betas(self, design: Design) -> dict[str, np.ndarray]:
        r = design.used_ratios
        omega = ratio_to_omega(self.technology, r if r.shape[1] > 1 else r[:, 0])
        return self.technology.evaluate(omega)

    def expected_output_value(self, design: Design) -> np.ndarray:
        """``p_y exp(Psi) E[exp(eta)]`` at every firm.

        Output price and flexible log quantities come from the hidden truth
        when the data carry it, and otherwise from the design (observed or
        unit prices).
        """
        b = self._betas(design)
        var = design.variant
        truth = design.truth
        use_truth = all(f in truth for f in var.flexible) and "p_y" in truth
        psi = b["0"].copy()
        for j, s in enumerate(var.state):
            psi += b[s] * design.state[:, j]
        for j, f in enumerate(var.flexible):
            psi += b[f] * (truth[f] if use_truth else design.flex[:, j])
        p_y = truth["p_y"] if use_truth else design.p_y
        return p_y * np.exp(psi) * expected_exp_eta(self.eta_sigma)

    def net_output_function(self, design: Design):
        """``(level at firm, callable x -> E[y_net | x, r_firm])``."""
        b = self._betas(design)
        var = design.variant
        slopes = np.column_stack([b[s] for s in var.state])

        def fn(x: np.ndarray, rows: np.ndarray) -> np.ndarray:
            return np.sum(slopes[rows] * x, axis=-1) + b["0"][rows]

        return fn


def _stencil_slopes(fn, state: np.ndarray) -> np.ndarray:
    """Least-squares slopes of ``fn`` over a star stencil around each firm."""
    n, S = state.shape
    offsets = np.vstack([np.zeros(S), np.eye(S), -np.eye(S)])
    Z = np.column_stack([np.ones(len(offsets)), offsets])
    pinv = np.linalg.pinv(Z)
    rows = np.arange(n)
    vals = np.column_stack([fn(state + o, rows) for o in offsets])  # (n, 2S+1)
    return vals @ pinv[1:].T


def _winsorize(v: np.ndarray, q: float | None) -> np.ndarray:
    if q is None:
        return v
    return np.minimum(v, np.quantile(v, q))


class _TrimmedStage:
    """Stand-in for a stage left without usable training rows: trims every query."""

    def __init__(self, d: int):
        self.d = d

    def local_fit(self, Q) -> LocalFits:
        n = np.asarray(Q).shape[0]
        return LocalFits(np.full(n, np.nan), np.full((n, self.d), np.nan), np.zeros(n),
                         np.full(n, FLAG_TRIMMED, dtype=np.int8), np.zeros(n), np.full(n, np.nan))


def _fit_smoother(config, spec, X, y, downstream=False):
    """Fit one stage on the rows with a finite response.

    Downstream stages train only on firms whose earlier stages succeeded; if
    too few remain, every firm is trimmed instead of raising.
    """
    finite = np.isfinite(y)
    Xf, yf = X[finite], y[finite]
    try:
        h = select_bandwidth(Xf, yf, spec, kernel=config.kernel, min_ess=config.min_ess)
        return LocalLinearRegression(kernel=config.kernel, bandwidth=h, min_ess=config.min_ess).fit(Xf, yf)
    except (InsufficientDataError, DataError):
        if downstream:
            return _TrimmedStage(X.shape[1])
        raise


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass
class ElasticityEstimates:
    """Per-firm estimates and diagnostics.

    ``betas`` and ``shares`` are keyed by coefficient name (``"l"``, ``"k"``,
    ``"m1"``, ..., ``"0"``). Stage flags use the smoother codes ``0`` ok,
    ``1`` ridge applied, ``2`` trimmed.
    """

    variant: str
    ratios: np.ndarray
    shares: dict[str, np.ndarray]
    betas: dict[str, np.ndarray]
    net_output: np.ndarray
    expected_output_value: np.ndarray
    share_flag: np.ndarray
    slope_flag: np.ndarray
    level_flag: np.ndarray
    clamped: np.ndarray

    def __len__(self):
        return self.net_output.shape[0]

    @property
    def trimmed(self) -> np.ndarray:
        return (
            (self.share_flag == FLAG_TRIMMED)
            | (self.slope_flag == FLAG_TRIMMED)
            | (self.level_flag == FLAG_TRIMMED)
        )

    @property
    def ridge(self) -> np.ndarray:
        return (
            (self.share_flag == FLAG_RIDGE)
            | (self.slope_flag == FLAG_RIDGE)
            | (self.level_flag == FLAG_RIDGE)
        )

    @property
    def status(self) -> np.ndarray:
        out = np.full(len(self), "ok", dtype=object)
        out[self.clamped] = "clamped"
        out[self.trimmed] = "trimmed"
        return out

    def flag_counts(self) -> dict[str, int]:
        return {
            "trimmed": int(self.trimmed.sum()),
            "clamped": int(self.clamped.sum()),
            "ridge": int(self.ridge.sum()),
        }

    def coefficient_matrix(self) -> np.ndarray:
        names = get_variant(self.variant).coefficients
        return np.column_stack([self.betas[c] for c in names])

    def to_columns(self) -> dict[str, np.ndarray]:
        var = get_variant(self.variant)
        cols = {}
        for j, name in enumerate(var.ratio_names):
            cols[name] = self.ratios[:, j]
        for f in var.flexible:
            cols[f"share_{f}"] = self.shares[f]
        for c in var.coefficients:
            cols[f"beta_{c}"] = self.betas[c]
        cols["share_flag"] = self.share_flag.astype(float)
        cols["slope_flag"] = self.slope_flag.astype(float)
        cols["level_flag"] = self.level_flag.astype(float)
        cols["clamped"] = self.clamped.astype(float)
        return cols


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def _clamp_shares(shares: np.ndarray, eps: float):
    """Clamp into (eps, 1 - eps) and keep the row sum below 1 - eps.

    Rows whose clipped sum is too large have their excess over ``eps``
    shrunk proportionally, so no share falls back below ``eps``.
    """
    finite = np.all(np.isfinite(shares), axis=1)
    out = shares.copy()
    clipped = np.clip(out, eps, 1.0 - eps)
    changed = finite & np.any(clipped != out, axis=1)
    out[finite] = clipped[finite]
    floor = eps * out.shape[1]
    total = out.sum(axis=1)
    over = finite & (total >= 1.0 - eps)
    target = (1.0 - eps) * (1.0 - 1e-12) - floor
    out[over] = eps + (out[over] - eps) * (target / (total[over] - floor))[:, None]
    return out, changed | over


def _shares_from(design: Design, expected: np.ndarray, eps: float):
    raw = design.costs / expected[:, None]
    return _clamp_shares(raw, eps)


def _share_stage(train: Design, query: Design, config: EstimatorConfig, oracle):
    if oracle is not None:
        expected = oracle.expected_output_value(query)
        flag = np.full(len(query), FLAG_OK, dtype=np.int8)
        return expected, flag, None
    response = _winsorize(train.output_value, config.winsorize_quantile)
    model = _fit_smoother(config, config.share_bandwidth, train.share_regressors, response)
    fits = model.local_fit(query.share_regressors)
    return fits.estimate, fits.flag, model


def estimate_shares(dataset, config: EstimatorConfig | None = None, oracle=None):
    """Ex-ante cost shares of every flexible input.

    Returns
    -------
    shares : ndarray (n, F)
        Clamped into ``(eps, 1 - eps)``; NaN where the fit was trimmed.
    clamped : ndarray of bool
    flag : ndarray of int8
        Smoother flag of the output-value regression.
    """
    config = config or EstimatorConfig(model_variant=as_dataset(dataset).variant)
    ds = as_dataset(dataset, config.model_variant)
    design = build_design(ds, config)
    expected, flag, _ = _share_stage(design, design, config, oracle)
    shares, clamped = _shares_from(design, expected, config.share_eps)
    return shares, clamped, flag


def net_output(y, shares, flex_logs):
    """Log output net of flexible inputs: ``y - sum_i s_i m_i``."""
    y = np.asarray(y, dtype=float)
    s = np.asarray(shares, dtype=float)
    m = np.asarray(flex_logs, dtype=float)
    return y - np.sum(s * m, axis=-1)


def _slope_stage(train: Design, train_net, query: Design, config, oracle):
    S = len(query.variant.state)
    if oracle is not None:
        fn = oracle.net_output_function(query)
        slopes = _stencil_slopes(fn, query.state)
        flag = np.full(len(query), FLAG_OK, dtype=np.int8)
        return slopes, flag, None, fn
    model = _fit_smoother(config, config.slope_bandwidth, train.slope_regressors, train_net, True)
    fits = model.local_fit(query.slope_regressors)
    return fits.gradient[:, :S], fits.flag, model, None


def estimate_labor_capital(dataset, net_outputs, config: EstimatorConfig | None = None, oracle=None):
    """Elasticities of the predetermined inputs, as local slopes of net output.

    Returns ``(slopes (n, S), flag)``; columns follow the variant's
    predetermined inputs (``l, k`` for the baseline).
    """
    config = config or EstimatorConfig(model_variant=as_dataset(dataset).variant)
    design = build_design(as_dataset(dataset, config.model_variant), config)
    slopes, flag, _, _ = _slope_stage(design, np.asarray(net_outputs, dtype=float), design, config, oracle)
    return slopes, flag


def _level_stage(train: Design, train_resid, query: Design, query_slopes, config, oracle, oracle_fn):
    if oracle is not None:
        rows = np.arange(len(query))
        level = oracle_fn(query.state, rows) - np.sum(query_slopes * query.state, axis=1)
        return level, np.full(len(query), FLAG_OK, dtype=np.int8), None
    model = _fit_smoother(config, config.level_bandwidth, train.slope_regressors, train_resid, True)
    fits = model.local_fit(query.slope_regressors)
    return fits.estimate, fits.flag, model


def estimate_additive_productivity(dataset, net_outputs, slopes, config: EstimatorConfig | None = None,
                                   oracle=None):
    """Additive productivity: local level of ``y_net - sum_j beta_j x_j``.

    Returns ``(beta_0, flag)``.
    """
    config = config or EstimatorConfig(model_variant=as_dataset(dataset).variant)
    design = build_design(as_dataset(dataset, config.model_variant), config)
    slopes = np.atleast_2d(np.asarray(slopes, dtype=float)).reshape(len(design), -1)
    resid = np.asarray(net_outputs, dtype=float) - np.sum(slopes * design.state, axis=1)
    fn = oracle.net_output_function(design) if oracle is not None else None
    level, flag, _ = _level_stage(design, resid, design, slopes, config, oracle, fn)
    return level, flag


@dataclass
class _FittedStages:
    share_model: LocalLinearRegression | None
    slope_model: LocalLinearRegression | None
    level_model: LocalLinearRegression | None


def _pipeline(design: Design, config: EstimatorConfig, oracle):
    var = design.variant
    expected, share_flag, share_model = _share_stage(design, design, config, oracle)
    shares, clamped = _shares_from(design, expected, config.share_eps)
    net = net_output(design.y, shares, design.flex)
    slopes, slope_flag, slope_model, oracle_fn = _slope_stage(design, net, design, config, oracle)
    resid = net - np.sum(slopes * design.state, axis=1)
    level, level_flag, level_model = _level_stage(
        design, resid, design, slopes, config, oracle, oracle_fn
    )
    est = _assemble(design, shares, clamped, expected, slopes, level,
                    share_flag, slope_flag, level_flag, net)
    return est, _FittedStages(share_model, slope_model, level_model)


def _assemble(design, shares, clamped, expected, slopes, level,
              share_flag, slope_flag, level_flag, net) -> ElasticityEstimates:
    var = design.variant
    betas = {s: slopes[:, j] for j, s in enumerate(var.state)}
    betas.update({f: shares[:, j] for j, f in enumerate(var.flexible)})
    betas["0"] = level
    return ElasticityEstimates(
        variant=var.name,
        ratios=design.ratios,
        shares={f: shares[:, j] for j, f in enumerate(var.flexible)},
        betas=betas,
        net_output=net,
        expected_output_value=expected,
        share_flag=np.asarray(share_flag, dtype=np.int8),
        slope_flag=np.asarray(slope_flag, dtype=np.int8),
        level_flag=np.asarray(level_flag, dtype=np.int8),
        clamped=clamped,
    )


def run_pipeline(dataset, config: EstimatorConfig | None = None, oracle: OracleExpectations | None = None
                 ) -> ElasticityEstimates:
    """Recover every firm's coefficients from observables.

    Stages run in order (shares, net output, slopes, level); each finishes
    for all firms before the next starts.
    """
    ds = as_dataset(dataset, config.model_variant if config else "baseline")
    config = config or EstimatorConfig(model_variant=ds.variant)
    design = build_design(ds, config)
    est, _ = _pipeline(design, config, oracle)
    return est


# ---------------------------------------------------------------------------
# Estimator
# ---------------------------------------------------------------------------

class HeterogeneousCobbDouglas(TransformerMixin, BaseEstimator):
    """Firm-specific Cobb-Douglas coefficients from output value and input costs.

    ``fit`` runs the full pipeline on a cross-section and stores the
    in-sample estimates. ``transform`` maps firms (the training firms or new
    ones) to their coefficient vectors, evaluating the fitted conditional
    expectations at each firm's own observables.

    Parameters
    ----------
    variant : str
        Model variant, see :mod:`hetcobb.variants`.
    kernel : {"epanechnikov", "gaussian"}
    bandwidth : {"rule_of_thumb", "loo_cv"}
        Bandwidth rule used by all three regression stages.
    bandwidth_constant : float
        Multiplier of the rule of thumb.
    min_ess : float
    share_eps : float
    prices_are_unit : bool
    winsorize_quantile : float or None
    ratio_conditioning : {"all", "first"}
    oracle : OracleExpectations or None
        Replace every smoother by analytic expectations (testing only).

    Attributes
    ----------
    estimates_ : ElasticityEstimates
        In-sample estimates from the last ``fit``.
    coef_names_ : list of str

    Examples
    --------
    >>> from hetcobb.simulator import SimulationConfig, simulate_cross_section
    >>> from hetcobb.technology import tech_a
    >>> data = simulate_cross_section(SimulationConfig(tech_a(), n_firms=500, seed=1))
    >>> model = HeterogeneousCobbDouglas().fit(data)
    >>> model.transform(data).shape
    (500, 5)
    """

    def __init__(self, variant="baseline", kernel="epanechnikov", bandwidth="rule_of_thumb",
                 bandwidth_constant=EPANECHNIKOV_RULE_CONSTANT, min_ess=15.0, share_eps=0.01,
                 prices_are_unit=True, winsorize_quantile=None, ratio_conditioning="all",
                 oracle=None):
        self.variant = variant
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.bandwidth_constant = bandwidth_constant
        self.min_ess = min_ess
        self.share_eps = share_eps
        self.prices_are_unit = prices_are_unit
        self.winsorize_quantile = winsorize_quantile
        self.ratio_conditioning = ratio_conditioning
        self.oracle = oracle

    def config(self) -> EstimatorConfig:
        bw = BandwidthSpec(rule=self.bandwidth, constant=self.bandwidth_constant)
        return EstimatorConfig(
            model_variant=self.variant, kernel=self.kernel, share_bandwidth=bw,
            slope_bandwidth=bw, level_bandwidth=bw, min_ess=self.min_ess,
            share_eps=self.share_eps, prices_are_unit=self.prices_are_unit,
            winsorize_quantile=self.winsorize_quantile,
            ratio_conditioning=self.ratio_conditioning,
        )

    def fit(self, X, y=None):
        config = self.config()
        ds = as_dataset(X, self.variant)
        design = build_design(ds, config)
        est, stages = _pipeline(design, config, self.oracle)
        self.estimates_ = est
        self._stages = stages
        self.coef_names_ = [f"beta_{c}" for c in config.variant.coefficients]
        self.n_features_in_ = len(config.variant.required_columns)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "estimates_")
        config = self.config()
        design = build_design(as_dataset(X, self.variant), config)
        return self._predict_estimates(design, config).coefficient_matrix()

    def estimate(self, X) -> ElasticityEstimates:
        """Full per-firm estimates (shares, flags, ...) for new firms."""
        check_is_fitted(self, "estimates_")
        config = self.config()
        return self._predict_estimates(build_design(as_dataset(X, self.variant), config), config)

    def _predict_estimates(self, query: Design, config: EstimatorConfig) -> ElasticityEstimates:
        if self.oracle is not None:
            est, _ = _pipeline(query, config, self.oracle)
            return est
        S = len(query.variant.state)
        fits = self._stages.share_model.local_fit(query.share_regressors)
        shares, clamped = _shares_from(query, fits.estimate, config.share_eps)
        net = net_output(query.y, shares, query.flex)
        slope_fits = self._stages.slope_model.local_fit(query.slope_regressors)
        level_fits = self._stages.level_model.local_fit(query.slope_regressors)
        return _assemble(query, shares, clamped, fits.estimate, slope_fits.gradient[:, :S],
                         level_fits.estimate, fits.flag, slope_fits.flag, level_fits.flag, net)

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X).estimates_.coefficient_matrix()

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "estimates_")
        return np.asarray(self.coef_names_, dtype=object)


# ---------------------------------------------------------------------------
# Locality diagnostic
# ---------------------------------------------------------------------------

@dataclass
class LocalityReport:
    """Per-firm support diagnostics in the space of (predetermined inputs, ratios).

    ``density`` is a product-kernel density estimate at the firm,
    ``spread[:, j]`` the local conditional standard deviation of
    predetermined input ``j`` given the other conditioning variables,
    relative to its overall standard deviation.
    """

    density: np.ndarray
    density_threshold: float
    spread: np.ndarray
    low_density: np.ndarray
    low_spread: np.ndarray

    @property
    def min_spread(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(np.isnan(self.spread).any(axis=1), np.nan, np.nanmin(self.spread, axis=1))

    @property
    def flagged(self) -> np.ndarray:
        return self.low_density | self.low_spread

    def summary(self) -> dict:
        n = self.density.shape[0]
        return {
            "n_firms": int(n),
            "flagged": int(self.flagged.sum()),
            "low_density": int(self.low_density.sum()),
            "low_spread": int(self.low_spread.sum()),
            "density_threshold": float(self.density_threshold),
        }


def locality_diagnostic(dataset, config: EstimatorConfig | None = None, query=None) -> LocalityReport:
    """Flag firms outside any estimated locality of identification.

    A firm is flagged when the density of (predetermined inputs, ratios) at
    its point is below ``config.density_floor`` times the sample median, or
    when some predetermined input barely varies locally once the other
    conditioning variables are held fixed (functional dependence). ``query``
    optionally holds extra points (rows of conditioning variables) to
    diagnose instead of the sample firms.
    """
    ds = as_dataset(dataset, config.model_variant if config else "baseline")
    config = config or EstimatorConfig(model_variant=ds.variant)
    design = build_design(ds, config)
    X = design.slope_regressors
    Q = X if query is None else np.atleast_2d(np.asarray(query, dtype=float))
    h = rule_of_thumb_bandwidth(X, config.slope_bandwidth.constant)

    kde = ProductKernelDensity(kernel=config.kernel, bandwidth=h).fit(X)
    dens_sample = kde.density(X)
    dens = dens_sample if query is None else kde.density(Q)
    threshold = config.density_floor * float(np.median(dens_sample))

    S = design.state.shape[1]
    spread = np.full((Q.shape[0], S), np.nan)
    for j in range(S):
        others = [c for c in range(X.shape[1]) if c != j]
        sd = X[:, j].std(ddof=1)
        if not sd > 0:
            spread[:, j] = 0.0
            continue
        model = LocalLinearRegression(kernel=config.kernel, bandwidth=h[others],
                                      min_ess=config.min_ess).fit(X[:, others], X[:, j])
        fits = model.local_fit(Q[:, others])
        spread[:, j] = np.sqrt(np.clip(fits.resid_var, 0.0, None)) / sd
    low_spread = np.isnan(spread).any(axis=1) | np.any(spread < config.spread_floor, axis=1)
    return LocalityReport(dens, threshold, spread, dens < threshold, low_spread)
