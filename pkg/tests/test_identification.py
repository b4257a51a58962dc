import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from hetcobb.dataset import Dataset
from hetcobb.exceptions import ConfigError, DataError, SchemaError
from hetcobb.identification import (
    EstimatorConfig,
    HeterogeneousCobbDouglas,
    OracleExpectations,
    _clamp_shares,
    build_design,
    compute_ratio,
    estimate_additive_productivity,
    estimate_labor_capital,
    estimate_shares,
    locality_diagnostic,
    net_output,
    run_pipeline,
)
from hetcobb.simulator import FirmState, SimulationConfig, simulate_cross_section, solve_flexible_inputs
from hetcobb.technology import affine_technology, eval_betas, tech_a

VARIANTS = ["baseline", "two_labor", "three_flexible", "single_m_flexible_labor"]


def _sim(variant="baseline", n=1000, seed=0, **kw):
    spec = kw.pop("technology", None) or tech_a(variant)
    return spec, simulate_cross_section(SimulationConfig(spec, n_firms=n, seed=seed, **kw))


def _oracle(spec, ds):
    return OracleExpectations.for_dataset(spec, ds)


def _max_err(est, ds):
    truth = ds.truth_betas()
    return {c: float(np.max(np.abs(est.betas[c] - truth[c]))) for c in truth}


# --- compute_ratio ---------------------------------------------------------------

def test_compute_ratio_examples():
    assert compute_ratio(2.0, 1.0) == 2.0
    assert compute_ratio(3.7, 3.7) == 1.0


def test_compute_ratio_tech_a_firm():
    betas = eval_betas(tech_a(), 0.5)
    m1, m2 = solve_flexible_inputs(FirmState(0.3, -0.2, 0.5), betas, 1.005)
    assert compute_ratio(np.exp(m1), np.exp(m2)) == pytest.approx(1.25, rel=1e-12)


@pytest.mark.parametrize("a, b", [(0.0, 1.0), (1.0, -2.0), (np.nan, 1.0)])
def test_compute_ratio_rejects_bad_costs(a, b):
    with pytest.raises(DataError):
        compute_ratio(a, b)


# --- shares ------------------------------------------------------------------------

def test_oracle_shares_equal_flexible_elasticities():
    spec, ds = _sim(n=500)
    shares, clamped, flag = estimate_shares(ds, EstimatorConfig(), oracle=_oracle(spec, ds))
    np.testing.assert_allclose(shares[:, 0], ds["true_beta_m1"], atol=1e-12)
    np.testing.assert_allclose(shares[:, 1], ds["true_beta_m2"], atol=1e-12)
    assert not clamped.any() and np.all(flag == 0)


def test_oracle_shares_at_midpoint_firm():
    spec = tech_a()
    betas = eval_betas(spec, 0.5)
    m = solve_flexible_inputs(FirmState(0.1, 0.2, 0.5), betas, np.exp(0.005))
    cols = {
        "output_value": [np.exp(0.25 * 0.1 + 0.3 * 0.2 + 0.5 + 0.25 * m[0] + 0.2 * m[1])],
        "cost_m1": [np.exp(m[0])], "cost_m2": [np.exp(m[1])],
        "log_labor": [0.1], "log_capital": [0.2],
    }
    shares, _, _ = estimate_shares(Dataset(cols), EstimatorConfig(), oracle=OracleExpectations(spec, 0.1))
    np.testing.assert_allclose(shares[0], [0.25, 0.20], atol=1e-12)


def test_noiseless_smoothed_shares():
    spec, ds = _sim(n=4000, eta_sigma=0.0, seed=2)
    design = build_design(ds, EstimatorConfig())
    shares, _, flag = estimate_shares(ds, EstimatorConfig())
    ok = flag != 2
    assert ok.mean() > 0.8
    # the output-value regression nearly interpolates noiseless data
    fitted = design.costs[ok, 0] / shares[ok, 0]
    assert np.median(np.abs(fitted / ds["output_value"][ok] - 1)) < 0.02
    assert np.sqrt(np.mean((shares[ok, 0] - ds["true_beta_m1"][ok]) ** 2)) < 0.01


def test_missing_columns_schema_error():
    _, ds = _sim(n=50)
    cols = {k: v for k, v in ds.columns.items() if k != "cost_m2"}
    with pytest.raises(SchemaError, match="cost_m2"):
        estimate_shares(Dataset(cols), EstimatorConfig())


def test_prices_required_when_not_unit():
    _, ds = _sim(n=50)
    with pytest.raises(SchemaError, match="p_y"):
        run_pipeline(ds, EstimatorConfig(prices_are_unit=False))


@given(arrays(float, (20, 2), elements=st.floats(-0.5, 1.5)), st.floats(0.001, 0.2))
def test_clamped_shares_respect_bounds(raw, eps):
    out, clamped = _clamp_shares(raw, eps)
    assert np.all(out >= eps) and np.all(out < 1 - eps)
    assert np.all(out.sum(axis=1) < 1 - eps)
    inside = np.all((raw > eps) & (raw < 1 - eps), axis=1) & (raw.sum(axis=1) < 1 - eps)
    np.testing.assert_array_equal(out[inside], raw[inside])
    assert not clamped[inside].any()


# --- net output ----------------------------------------------------------------------

def test_net_output_without_shares_is_log_output():
    y = np.array([0.3, -1.0])
    np.testing.assert_array_equal(net_output(y, np.zeros((2, 2)), np.ones((2, 2))), y)


@pytest.mark.parametrize("sigma", [0.0, 0.1])
def test_net_output_under_oracle_shares(sigma):
    spec, ds = _sim(n=300, eta_sigma=sigma)
    est = run_pipeline(ds, EstimatorConfig(), oracle=_oracle(spec, ds))
    target = (ds["true_beta_l"] * ds["log_labor"] + ds["true_beta_k"] * ds["log_capital"]
              + ds["true_beta_0"] + ds["true_eta"])
    np.testing.assert_allclose(est.net_output, target, atol=1e-10)


# --- labor / capital and productivity --------------------------------------------------

def test_oracle_labor_capital_exact():
    spec, ds = _sim(n=300)
    oracle = _oracle(spec, ds)
    est = run_pipeline(ds, EstimatorConfig(), oracle=oracle)
    slopes, flag = estimate_labor_capital(ds, est.net_output, EstimatorConfig(), oracle=oracle)
    np.testing.assert_allclose(slopes[:, 0], 0.25, atol=1e-12)
    np.testing.assert_allclose(slopes[:, 1], 0.30, atol=1e-12)
    level, _ = estimate_additive_productivity(ds, est.net_output, slopes, EstimatorConfig(), oracle=oracle)
    np.testing.assert_allclose(level, ds["true_omega"], atol=1e-10)


def test_oracle_productivity_at_midpoint():
    spec, ds = _sim(n=400)
    est = run_pipeline(ds, EstimatorConfig(), oracle=_oracle(spec, ds))
    i = int(np.argmin(np.abs(ds["true_omega"] - 0.5)))
    assert est.betas["0"][i] == pytest.approx(ds["true_omega"][i], abs=1e-10)
    # an exact midpoint firm
    r = np.array([1.25])
    assert OracleExpectations(spec, 0.1).technology.evaluate(0.5)["0"][0] == 0.5
    from hetcobb.technology import ratio_to_omega
    assert ratio_to_omega(spec, r)[0] == pytest.approx(0.5, abs=1e-14)


def test_smoothed_labor_capital_near_truth():
    _, ds = _sim(n=3000, seed=5)
    est = run_pipeline(ds, EstimatorConfig())
    ok = ~est.trimmed
    assert np.median(est.betas["l"][ok]) == pytest.approx(0.25, abs=0.03)
    assert np.median(est.betas["k"][ok]) == pytest.approx(0.30, abs=0.03)


def test_noiseless_productivity_from_true_slopes():
    spec, ds = _sim(n=3000, eta_sigma=0.0, seed=6)
    oracle = _oracle(spec, ds)
    est = run_pipeline(ds, EstimatorConfig(), oracle=oracle)
    slopes = np.column_stack([ds["true_beta_l"], ds["true_beta_k"]])
    # smoothed level stage on oracle net output: error comes only from smoothing in r
    level, flag = estimate_additive_productivity(ds, est.net_output, slopes, EstimatorConfig())
    ok = flag != 2
    assert np.sqrt(np.mean((level[ok] - ds["true_omega"][ok]) ** 2)) < 0.01


def test_constant_productivity_estimated_flat():
    spec = affine_technology(beta_l=0.25, beta_k=0.3, beta_m1=(0.2, 0.1), beta_m2=0.2, beta_0=0.4)
    _, ds = _sim(technology=spec, n=4000, seed=8)
    est = run_pipeline(ds, EstimatorConfig())
    b0 = est.betas["0"][~est.trimmed]
    assert np.median(b0) == pytest.approx(0.4, abs=0.03)
    assert np.quantile(b0, 0.9) - np.quantile(b0, 0.1) < 0.1


def test_functional_dependence_flags_labor_fits():
    spec, ds = _sim(n=1000, seed=3, labor_fn=lambda k, w: 0.5 * k + 0.8 * w - 0.4)
    est = run_pipeline(ds, EstimatorConfig())
    assert np.all(est.slope_flag > 0)


# --- full pipeline ---------------------------------------------------------------------

@pytest.mark.parametrize("variant", VARIANTS)
def test_oracle_exactness_all_variants(variant):
    spec, ds = _sim(variant, n=500, seed=4)
    est = run_pipeline(ds, EstimatorConfig(model_variant=variant), oracle=_oracle(spec, ds))
    assert max(_max_err(est, ds).values()) <= 1e-10
    assert est.flag_counts() == {"trimmed": 0, "clamped": 0, "ridge": 0}


def test_oracle_exactness_two_dimensional_latent():
    spec = affine_technology(
        support=(0, 1, 0, 1), variant="three_flexible",
        beta_l=0.2, beta_k=0.2, beta_m1=(0.15, 0.1, 0.0), beta_m2=0.15, beta_m3=(0.1, 0.0, 0.08),
        beta_0=(0.0, 1.0, 0.5),
    )
    _, ds = _sim("three_flexible", technology=spec, n=500)
    est = run_pipeline(ds, EstimatorConfig(model_variant="three_flexible"), oracle=_oracle(spec, ds))
    assert max(_max_err(est, ds).values()) <= 1e-10


def test_oracle_exactness_with_observed_prices():
    spec, ds = _sim(n=500, log_price_sd=0.3, observe_prices=True)
    est = run_pipeline(ds.observables(), EstimatorConfig(prices_are_unit=False),
                       oracle=OracleExpectations(spec, 0.1))
    assert max(_max_err(est, ds).values()) <= 1e-10


def test_single_material_labor_is_a_share():
    spec, ds = _sim("single_m_flexible_labor", n=300)
    est = run_pipeline(ds, EstimatorConfig(model_variant="single_m_flexible_labor"), oracle=_oracle(spec, ds))
    np.testing.assert_array_equal(est.betas["l"], est.shares["l"])
    assert est.ratios.shape == (300, 1)


def test_three_flexible_first_ratio_shortcut():
    spec, ds = _sim("three_flexible", n=500)
    oracle = _oracle(spec, ds)
    both = run_pipeline(ds, EstimatorConfig(model_variant="three_flexible"), oracle=oracle)
    first = run_pipeline(ds, EstimatorConfig(model_variant="three_flexible", ratio_conditioning="first"),
                         oracle=oracle)
    for c in both.betas:
        np.testing.assert_allclose(first.betas[c], both.betas[c], rtol=0, atol=1e-14)


def test_scale_invariance_power_of_two_is_bitwise():
    spec, ds = _sim(n=400)
    scaled = {c: (v * 8.0 if c == "output_value" or c.startswith(("cost_", "true_p_")) else v)
              for c, v in ds.columns.items()}
    ds2 = Dataset(scaled, ds.variant, dict(ds.meta))
    a = run_pipeline(ds, EstimatorConfig(), oracle=_oracle(spec, ds))
    b = run_pipeline(ds2, EstimatorConfig(), oracle=_oracle(spec, ds2))
    np.testing.assert_array_equal(a.ratios, b.ratios)
    for f in a.shares:
        np.testing.assert_array_equal(a.shares[f], b.shares[f])


def test_untrimmed_shares_inside_unit_interval():
    _, ds = _sim(n=2000, seed=9)
    cfg = EstimatorConfig()
    est = run_pipeline(ds, cfg)
    ok = est.share_flag != 2
    s = np.column_stack([est.shares[f] for f in est.shares])[ok]
    assert np.all(s > cfg.share_eps * (1 - 1e-12)) and np.all(s < 1 - cfg.share_eps)
    assert np.all(s.sum(axis=1) < 1)


def test_pipeline_deterministic():
    _, ds = _sim(n=800, seed=3)
    a = run_pipeline(ds, EstimatorConfig())
    b = run_pipeline(ds, EstimatorConfig())
    for c in a.betas:
        assert a.betas[c].tobytes() == b.betas[c].tobytes()


def test_variant_mismatch():
    _, ds = _sim("two_labor", n=50)
    with pytest.raises(SchemaError):
        run_pipeline(ds, EstimatorConfig())


def test_winsorized_share_stage_runs():
    _, ds = _sim(n=2000, seed=1)
    plain = run_pipeline(ds, EstimatorConfig())
    wins = run_pipeline(ds, EstimatorConfig(winsorize_quantile=0.99))
    ok = (plain.share_flag != 2) & (wins.share_flag != 2)
    assert np.max(np.abs(plain.shares["m1"][ok] - wins.shares["m1"][ok])) > 0
    assert np.median(np.abs(plain.shares["m1"][ok] - wins.shares["m1"][ok])) < 0.01


def test_status_labels():
    _, ds = _sim(n=600, seed=1)
    est = run_pipeline(ds, EstimatorConfig())
    st_ = est.status
    assert set(st_) <= {"ok", "clamped", "trimmed"}
    assert (st_ == "trimmed").sum() == est.flag_counts()["trimmed"]
    cols = est.to_columns()
    assert {"r_m1_m2", "share_m1", "beta_0", "slope_flag"} <= set(cols)


@pytest.mark.parametrize("kw", [dict(share_eps=0.5), dict(share_eps=0.0), dict(model_variant="x"),
                                dict(ratio_conditioning="none"), dict(winsorize_quantile=0.3)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        EstimatorConfig(**kw)


# --- estimator API -----------------------------------------------------------------------

def test_estimator_api():
    _, ds = _sim(n=1500, seed=2)
    model = HeterogeneousCobbDouglas()
    out = model.fit_transform(ds)
    assert out.shape == (1500, 5)
    np.testing.assert_array_equal(model.get_feature_names_out(),
                                  ["beta_l", "beta_k", "beta_m1", "beta_m2", "beta_0"])
    again = model.transform(ds)
    np.testing.assert_allclose(again, out, equal_nan=True, atol=1e-12)
    params = model.get_params()
    assert params["variant"] == "baseline" and params["min_ess"] == 15.0
    c = clone(model).set_params(min_ess=5.0)
    assert c.get_params()["min_ess"] == 5.0


def test_estimator_accepts_arrays_and_predicts_new_firms():
    _, ds = _sim(n=1500, seed=2)
    names = ["output_value", "cost_m1", "cost_m2", "log_labor", "log_capital"]
    X = np.column_stack([ds[c] for c in names])
    model = HeterogeneousCobbDouglas().fit(X)
    _, new = _sim(n=200, seed=99)
    est = model.estimate(new)
    ok = ~est.trimmed
    assert ok.sum() > 50
    assert np.median(np.abs(est.betas["m1"][ok] - new["true_beta_m1"][ok])) < 0.02
    with pytest.raises(SchemaError):
        model.transform(X[:, :3])


def test_estimator_oracle_param():
    spec, ds = _sim(n=300)
    model = HeterogeneousCobbDouglas(oracle=OracleExpectations(spec, 0.1)).fit(ds)
    truth = np.column_stack([ds.truth_betas()[c] for c in ("l", "k", "m1", "m2", "0")])
    np.testing.assert_allclose(model.transform(ds), truth, atol=1e-10)


# --- locality diagnostic --------------------------------------------------------------------

def test_locality_uniform_box_interior_passes():
    _, ds = _sim(n=1000, seed=2, state_law="uniform", state_sd=0.4)
    rep = locality_diagnostic(ds, EstimatorConfig())
    X = build_design(ds, EstimatorConfig()).slope_regressors
    lo, hi = np.quantile(X, [0.1, 0.9], axis=0)
    interior = np.all((X > lo) & (X < hi), axis=1)
    assert (~rep.flagged[interior]).mean() > 0.95


def test_locality_far_point_flagged():
    _, ds = _sim(n=1000, seed=2)
    rep = locality_diagnostic(ds, EstimatorConfig(), query=[[0.0, 0.0, 1.25], [10.0, 10.0, 1.25]])
    assert rep.density[1] == 0.0
    assert rep.flagged[1] and not rep.flagged[0]


@pytest.mark.parametrize("g", [lambda k, w: 0.5 * k + 0.8 * w - 0.4, lambda k, w: 0.5 * k + 0.8 * w**2])
def test_locality_functional_dependence(g):
    _, ds = _sim(n=1000, seed=3, labor_fn=g)
    rep = locality_diagnostic(ds, EstimatorConfig())
    assert rep.flagged.mean() >= 0.99
    assert np.nanmax(rep.spread[:, 0]) < 0.05
