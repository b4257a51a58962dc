"""Synthetic firm cross-sections from the heterogeneous Cobb-Douglas model.

Firms take their predetermined inputs and latent technology as given and
pick flexible inputs to maximise expected profit before the output shock
``eta`` is drawn. With ``eta ~ Normal(0, sigma^2)`` the expected shock
multiplier is ``exp(sigma^2 / 2)``, so the optimum has a closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .dataset import TRUTH_PREFIX, Dataset
from .exceptions import ConfigError, OracleFailure, PreconditionError
from .technology import CoefficientVector, TechnologySpec, validate_assumptions
from .variants import get_variant

__all__ = [
    "FirmState",
    "SimulationConfig",
    "expected_exp_eta",
    "flexible_log_inputs",
    "solve_flexible_inputs",
    "foc_residual",
    "expected_profit",
    "brute_force_profit_maximizer",
    "simulate_cross_section",
]


@dataclass(frozen=True)
class FirmState:
    """Pre-shock state of one firm: predetermined log inputs, latent technology, prices.

    ``l_u`` is only read by the two-labor variant, ``p_m3`` by the three-input
    variant and ``p_l`` by the variant with flexible labor (where ``l`` is a
    choice, not a state, and is ignored).
    """

    l: float
    k: float
    omega: float | tuple[float, float]
    p_y: float = 1.0
    p_m1: float = 1.0
    p_m2: float = 1.0
    p_m3: float = 1.0
    l_u: float = 0.0
    p_l: float = 1.0

    def __post_init__(self):
        for name in ("p_y", "p_m1", "p_m2", "p_m3", "p_l"):
            if not getattr(self, name) > 0:
                raise PreconditionError(f"price {name} must be strictly positive")

    def state_value(self, name: str) -> float:
        return {"l": self.l, "lu": self.l_u, "k": self.k}[name]

    def price(self, name: str) -> float:
        return getattr(self, f"p_{name}")


def expected_exp_eta(eta_sigma: float) -> float:
    """Mean of ``exp(eta)`` for ``eta ~ Normal(0, eta_sigma^2)``."""
    if eta_sigma < 0:
        raise ConfigError("eta_sigma must be nonnegative")
    return math.exp(0.5 * eta_sigma**2)


def flexible_log_inputs(fixed, flex_betas, flex_prices, p_y, e_exp_eta):
    """Vectorised profit-maximising log flexible inputs.

    Parameters
    ----------
    fixed : array, shape (n,)
        Non-flexible part of log output: ``sum_j beta_j x_j + beta_0``.
    flex_betas, flex_prices : array, shape (n, F)
        Elasticities and unit prices of the flexible inputs.
    p_y : array, shape (n,)
    e_exp_eta : float

    Returns
    -------
    array, shape (n, F)
        ``m_i = c_i + (ln p_y + fixed + ln E[exp eta] + sum_j beta_j c_j) / (1 - B)``
        where ``c_i = ln(beta_i / p_i)`` and ``B = sum_j beta_j``.
    """
    flex_betas = np.atleast_2d(np.asarray(flex_betas, dtype=float))
    flex_prices = np.atleast_2d(np.asarray(flex_prices, dtype=float))
    B = flex_betas.sum(axis=1)
    if np.any(B >= 1) or np.any(flex_betas <= 0):
        raise PreconditionError(
            "flexible elasticities must be positive and sum to less than one"
        )
    c = np.log(flex_betas) - np.log(flex_prices)
    common = (np.log(p_y) + np.asarray(fixed, dtype=float) + math.log(e_exp_eta)
              + np.sum(flex_betas * c, axis=1)) / (1.0 - B)
    return c + common[:, None]


def _split(state: FirmState, betas: CoefficientVector, variant: str):
    var = get_variant(variant)
    fixed = sum(betas.get(s) * state.state_value(s) for s in var.state) + betas.beta_0
    fb = np.array([betas.get(f) for f in var.flexible])
    fp = np.array([state.price(f) for f in var.flexible])
    return var, fixed, fb, fp


def solve_flexible_inputs(
    state: FirmState, betas: CoefficientVector, e_exp_eta: float, variant: str = "baseline"
) -> tuple[float, ...]:
    """Closed-form optimal log flexible inputs, ordered as the variant's flexible inputs.

    >>> from hetcobb.technology import tech_a, eval_betas
    >>> m1, m2 = solve_flexible_inputs(FirmState(0.0, 0.0, 0.5), eval_betas(tech_a(), 0.5), 1.0)
    """
    _, fixed, fb, fp = _split(state, betas, variant)
    m = flexible_log_inputs(np.array([fixed]), fb[None, :], fp[None, :], np.array([state.p_y]), e_exp_eta)
    return tuple(float(x) for x in m[0])


def _log_output_det(fixed, fb, inputs):
    return fixed + float(np.dot(fb, inputs))


def foc_residual(
    state: FirmState,
    betas: CoefficientVector,
    inputs: Sequence[float],
    e_exp_eta: float,
    iota: int,
    variant: str = "baseline",
) -> float:
    """Relative first-order-condition residual for flexible input ``iota`` (1-based).

    ``(p_y beta_i exp(Psi) E[exp eta] - p_i exp(m_i)) / (p_i exp(m_i))``
    """
    var, fixed, fb, fp = _split(state, betas, variant)
    if not 1 <= iota <= len(var.flexible):
        raise ConfigError(f"iota must be in 1..{len(var.flexible)}")
    x = np.asarray(inputs, dtype=float)
    i = iota - 1
    psi = _log_output_det(fixed, fb, x)
    # computed as exp(log lhs - log rhs) - 1 to stay finite for large inputs
    return math.expm1(
        math.log(state.p_y) + math.log(fb[i]) + psi + math.log(e_exp_eta)
        - math.log(fp[i]) - x[i]
    )


def expected_profit(state, betas, inputs, e_exp_eta, variant="baseline") -> np.ndarray:
    """Expected profit at one or many log flexible input vectors (last axis = inputs)."""
    _, fixed, fb, fp = _split(state, betas, variant)
    x = np.asarray(inputs, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        revenue = state.p_y * e_exp_eta * np.exp(fixed + x @ fb)
        cost = np.exp(x) @ fp
        val = revenue - cost
    return np.where(np.isfinite(val), val, -np.inf)


def brute_force_profit_maximizer(
    state: FirmState,
    betas: CoefficientVector,
    e_exp_eta: float,
    variant: str = "baseline",
    half_width: float = 64.0,
    points: int = 33,
    zoom_levels: int = 8,
    max_shifts: int = 40,
    newton_max_iter: int = 200,
    tol: float = 1e-14,
) -> tuple[float, ...]:
    """Maximise expected profit numerically; test oracle for the closed form.

    A coarse grid over log inputs is recentred until the best point is
    interior, zoomed in several times, and then polished by damped Newton
    iterations on the scaled profit gradient
    ``h_i(m) = p_y beta_i E exp(Psi(m)) / (p_i exp(m_i)) - 1``.

    Raises
    ------
    OracleFailure
        If Newton does not reach ``max |h| <= tol``.
    """
    var, fixed, fb, fp = _split(state, betas, variant)
    if fb.sum() >= 1 or np.any(fb <= 0):
        raise PreconditionError("flexible elasticities must be positive and sum to less than one")
    F = len(fb)
    center = np.zeros(F)
    step = 2.0 * half_width / (points - 1)

    def grid_best(center, step):
        axes = [c + step * np.arange(-(points // 2), points // 2 + 1) for c in center]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, F)
        vals = expected_profit(state, betas, mesh, e_exp_eta, variant)
        j = int(np.argmax(vals))
        idx = np.unravel_index(j, (len(axes[0]),) * F)
        on_edge = any(i in (0, len(axes[0]) - 1) for i in idx)
        return mesh[j], on_edge

    for _ in range(max_shifts):
        best, on_edge = grid_best(center, step)
        if not on_edge:
            break
        center = best
    else:
        raise OracleFailure("grid search never found an interior maximum")
    center = best
    for _ in range(zoom_levels):
        step /= 4.0
        center, _ = grid_best(center, step)

    log_a = math.log(state.p_y) + np.log(fb) + fixed + math.log(e_exp_eta) - np.log(fp)

    def scaled_grad(m):
        return np.expm1(log_a + fb @ m - m)

    m = center.copy()
    h = scaled_grad(m)
    for _ in range(newton_max_iter):
        if np.max(np.abs(h)) <= tol:
            return tuple(float(x) for x in m)
        J = (h + 1.0)[:, None] * (fb[None, :] - np.eye(F))
        try:
            delta = np.linalg.solve(J, -h)
        except np.linalg.LinAlgError as exc:
            raise OracleFailure("singular Jacobian in Newton refinement") from exc
        t = 1.0
        merit = float(h @ h)
        while t > 1e-12:
            cand = m + t * delta
            hc = scaled_grad(cand)
            if np.all(np.isfinite(hc)) and float(hc @ hc) < merit:
                break
            t *= 0.5
        else:
            if np.max(np.abs(h)) <= 1e3 * tol:
                return tuple(float(x) for x in m)
            raise OracleFailure("line search stalled in Newton refinement")
        m, h = cand, hc
    raise OracleFailure(f"Newton refinement did not converge in {newton_max_iter} iterations")


@dataclass(frozen=True)
class SimulationConfig:
    """How a synthetic cross-section is drawn.

    Predetermined log inputs are a truncated equicorrelated normal on the box
    ``state_mean +/- state_box * state_sd`` (``state_law="normal"``), or
    independent uniforms on that box (``state_law="uniform"``, which ignores
    ``state_corr``). The latent technology is uniform
    on its support, unless ``omega_persistence`` > 0, in which case a lagged
    draw ``omega_prev`` shifts the state means by ``state_omega_loading`` (in
    standard deviations per unit of standardised ``omega_prev``) and
    ``omega = rho * omega_prev + (1 - rho) * u`` with a fresh uniform ``u``.
    Log prices are ``Normal(log_price_mean, log_price_sd^2)``; the default
    puts every price at one.

    ``labor_fn(k, omega)``, when given, replaces the drawn labor with a
    deterministic function, which produces the functional-dependence failure.
    """

    technology: TechnologySpec
    n_firms: int = 1000
    eta_sigma: float = 0.1
    seed: int = 0
    state_mean: float = 0.0
    state_sd: float = 0.5
    state_corr: float = 0.3
    state_box: float = 2.5
    omega_persistence: float = 0.0
    state_omega_loading: float = 0.0
    log_price_mean: float = 0.0
    log_price_sd: float = 0.0
    observe_prices: bool = False
    labor_fn: Callable | None = field(default=None, compare=False)
    state_law: str = "normal"

    def __post_init__(self):
        if self.state_law not in ("normal", "uniform"):
            raise ConfigError("state_law must be 'normal' or 'uniform'")
        if self.n_firms < 1:
            raise ConfigError("n_firms must be at least 1")
        if self.eta_sigma < 0:
            raise ConfigError("eta_sigma must be nonnegative")
        if self.state_sd <= 0 or self.state_box <= 0:
            raise ConfigError("state_sd and state_box must be positive")
        if not 0 <= self.omega_persistence < 1:
            raise ConfigError("omega_persistence must lie in [0, 1)")
        if self.log_price_sd < 0:
            raise ConfigError("log_price_sd must be nonnegative")
        d = len(self.technology.model_variant.state)
        if d > 1 and not -1.0 / (d - 1) < self.state_corr < 1.0:
            raise ConfigError("state_corr does not give a positive definite correlation")

    @property
    def variant(self) -> str:
        return self.technology.variant

    def with_(self, **changes) -> "SimulationConfig":
        return replace(self, **changes)


def _uniform_omega(rng, spec: TechnologySpec, n: int) -> np.ndarray:
    if spec.omega_dim == 1:
        lo, hi = spec.omega_support
        return rng.uniform(lo, hi, size=n)
    (lo1, hi1), (lo2, hi2) = spec.omega_support
    return np.column_stack([rng.uniform(lo1, hi1, size=n), rng.uniform(lo2, hi2, size=n)])


def _truncated_states(rng, cfg: SimulationConfig, shift: np.ndarray) -> np.ndarray:
    n, d = shift.shape
    if cfg.state_law == "uniform":
        z = rng.uniform(-cfg.state_box, cfg.state_box, size=(n, d))
        return cfg.state_mean + cfg.state_sd * np.clip(z + shift, -cfg.state_box, cfg.state_box)
    corr = np.full((d, d), cfg.state_corr)
    np.fill_diagonal(corr, 1.0)
    chol = np.linalg.cholesky(corr)
    out = np.empty((n, d))
    todo = np.arange(n)
    while todo.size:
        z = rng.standard_normal((todo.size, d)) @ chol.T + shift[todo]
        ok = np.all(np.abs(z) <= cfg.state_box, axis=1)
        out[todo[ok]] = z[ok]
        todo = todo[~ok]
    return cfg.state_mean + cfg.state_sd * out


def simulate_cross_section(config: SimulationConfig) -> Dataset:
    """Draw one cross-section of firms, with hidden truth in ``true_*`` columns."""
    spec = config.technology
    report = validate_assumptions(spec)
    if not report.passed:
        names = ", ".join(c.name for c in report.failures())
        raise PreconditionError(f"technology fails structural checks: {names}")
    var = spec.model_variant
    rng = np.random.default_rng(config.seed)
    n = config.n_firms

    if config.omega_persistence > 0:
        prev = _uniform_omega(rng, spec, n)
        omega = config.omega_persistence * prev + (1 - config.omega_persistence) * _uniform_omega(rng, spec, n)
        lo = np.array(spec.omega_support).reshape(-1, 2)[:, 0]
        hi = np.array(spec.omega_support).reshape(-1, 2)[:, 1]
        z = (np.asarray(prev).reshape(n, -1) - (lo + hi) / 2) / ((hi - lo) / 2)
        shift = np.repeat(config.state_omega_loading * z.mean(axis=1, keepdims=True), len(var.state), axis=1)
    else:
        omega = _uniform_omega(rng, spec, n)
        shift = np.zeros((n, len(var.state)))
    states = _truncated_states(rng, config, shift)
    state_cols = {name: states[:, j] for j, name in enumerate(var.state)}
    if config.labor_fn is not None:
        if "l" not in var.state:
            raise ConfigError("labor_fn only applies to variants with predetermined labor")
        state_cols["l"] = np.asarray(config.labor_fn(state_cols["k"], omega), dtype=float)

    def draw_prices():
        if config.log_price_sd == 0:
            return np.full(n, math.exp(config.log_price_mean))
        return np.exp(rng.normal(config.log_price_mean, config.log_price_sd, size=n))

    p_y = draw_prices()
    flex_prices = np.column_stack([draw_prices() for _ in var.flexible])

    betas = spec.evaluate(omega)
    fixed = sum(betas[s] * state_cols[s] for s in var.state) + betas["0"]
    fb = np.column_stack([betas[f] for f in var.flexible])
    e_eta = expected_exp_eta(config.eta_sigma)
    m = flexible_log_inputs(fixed, fb, flex_prices, p_y, e_eta)
    eta = rng.normal(0.0, config.eta_sigma, size=n) if config.eta_sigma > 0 else np.zeros(n)
    psi = fixed + np.sum(fb * m, axis=1)
    y = psi + eta

    cols: dict[str, np.ndarray] = {"firm_id": np.arange(n, dtype=float)}
    cols["output_value"] = p_y * np.exp(y)
    for j, f in enumerate(var.flexible):
        cols[f"cost_{f}"] = flex_prices[:, j] * np.exp(m[:, j])
    for s, colname in zip(var.state, var.state_columns):
        cols[colname] = state_cols[s]
    if config.observe_prices:
        cols["p_y"] = p_y
        for j, f in enumerate(var.flexible):
            cols[f"p_{f}"] = flex_prices[:, j]

    t = TRUTH_PREFIX
    if spec.omega_dim == 1:
        cols[f"{t}omega"] = omega
    else:
        cols[f"{t}omega_1"], cols[f"{t}omega_2"] = omega[:, 0], omega[:, 1]
    cols[f"{t}eta"] = eta
    cols[f"{t}y"] = y
    for name in var.coefficients:
        cols[f"{t}beta_{name}"] = betas[name]
    for j, f in enumerate(var.flexible):
        cols[f"{t}{f}"] = m[:, j]
        cols[f"{t}p_{f}"] = flex_prices[:, j]
    cols[f"{t}p_y"] = p_y
    return Dataset(cols, var.name, meta={"eta_sigma": config.eta_sigma})
