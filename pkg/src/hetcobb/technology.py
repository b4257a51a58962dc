"""Heterogeneous Cobb-Douglas technologies indexed by a latent scalar or pair.

A technology is a bundle of coefficient functions ``omega -> beta`` plus the
support of ``omega``. Functions must accept a numpy array of latent values
(shape ``(n,)`` for scalar technology, ``(n, 2)`` for a pair) and return an
array of shape ``(n,)`` or anything broadcastable to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from functools import cached_property
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy import optimize, special

from .exceptions import ConfigError, DomainError
from .variants import Variant, get_variant

__all__ = [
    "CoefficientVector",
    "TechnologySpec",
    "AssumptionCheck",
    "ValidationReport",
    "affine_technology",
    "logistic_technology",
    "tech_a",
    "eval_betas",
    "validate_assumptions",
    "ratio_to_omega",
    "technology_from_config",
]

CoefficientFn = Callable[[np.ndarray], Any]

_IMAGE_SLACK = 1e-9


@dataclass(frozen=True)
class CoefficientVector:
    """Coefficient values of one firm.

    ``beta_m2`` is ``None`` for the single-material variant, ``beta_m3`` and
    ``beta_lu`` are only set for the variants that use them. In the two-labor
    variant ``beta_l`` is the skilled-labor elasticity.
    """

    beta_l: float
    beta_k: float
    beta_m1: float
    beta_m2: float | None
    beta_0: float
    beta_m3: float | None = None
    beta_lu: float | None = None

    def get(self, name: str) -> float:
        value = getattr(self, f"beta_{name}")
        if value is None:
            raise KeyError(f"coefficient beta_{name} is not defined for this vector")
        return value

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None)


@dataclass(frozen=True)
class TechnologySpec:
    """Coefficient functions of the latent technology and their support.

    Parameters
    ----------
    beta_l_fn, beta_k_fn, beta_m1_fn, beta_m2_fn, beta_0_fn : callable
        Vectorised maps from latent values to coefficients. ``beta_m2_fn`` may
        be ``None`` for the single-material variant.
    omega_support : tuple
        ``(lo, hi)`` for scalar technology or ``((lo1, hi1), (lo2, hi2))`` for
        a two-dimensional one.
    family_tag : str
        ``"affine"``, ``"logistic"`` or ``"custom"``.
    variant : str
        Model variant the technology is meant for.
    beta_m3_fn, beta_lu_fn : callable, optional
        Extra coefficients for ``three_flexible`` and ``two_labor``.
    params : mapping
        Family parameters, used for closed-form inversion and serialization.
    """

    beta_l_fn: CoefficientFn
    beta_k_fn: CoefficientFn
    beta_m1_fn: CoefficientFn
    beta_m2_fn: CoefficientFn | None
    beta_0_fn: CoefficientFn
    omega_support: tuple
    family_tag: str = "custom"
    variant: str = "baseline"
    beta_m3_fn: CoefficientFn | None = None
    beta_lu_fn: CoefficientFn | None = None
    params: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        support = _normalize_support(self.omega_support)
        object.__setattr__(self, "omega_support", support)
        var = get_variant(self.variant)
        for name in var.coefficients:
            if self._fn(name) is None:
                raise ConfigError(
                    f"variant {var.name!r} needs a beta_{name} function"
                )
        if self.omega_dim == 2 and var.name != "three_flexible":
            raise ConfigError(
                "a two-dimensional latent technology needs two cost ratios "
                "(variant 'three_flexible')"
            )

    @property
    def omega_dim(self) -> int:
        return 2 if isinstance(self.omega_support[0], tuple) else 1

    @property
    def model_variant(self) -> Variant:
        return get_variant(self.variant)

    def _fn(self, name: str) -> CoefficientFn | None:
        return getattr(self, f"beta_{name}_fn")

    def contains(self, omega) -> np.ndarray:
        w = self._as_omega_array(omega)
        if self.omega_dim == 1:
            lo, hi = self.omega_support
            return (w >= lo) & (w <= hi)
        (lo1, hi1), (lo2, hi2) = self.omega_support
        return (w[:, 0] >= lo1) & (w[:, 0] <= hi1) & (w[:, 1] >= lo2) & (w[:, 1] <= hi2)

    def _as_omega_array(self, omega) -> np.ndarray:
        w = np.asarray(omega, dtype=float)
        if self.omega_dim == 1:
            return np.atleast_1d(w).reshape(-1)
        return np.atleast_2d(w).reshape(-1, 2)

    def evaluate(self, omega) -> dict[str, np.ndarray]:
        """Vectorised coefficient evaluation, keyed by coefficient name."""
        w = self._as_omega_array(omega)
        n = w.shape[0]
        out = {}
        for name in self.model_variant.coefficients:
            vals = np.asarray(self._fn(name)(w), dtype=float)
            out[name] = np.broadcast_to(vals, (n,)).astype(float)
        return out

    def ratio_values(self, omega) -> np.ndarray:
        """Elasticity ratios for the variant's cost ratios, shape ``(n, n_ratios)``."""
        b = self.evaluate(omega)
        return np.column_stack([b[a] / b[c] for a, c in self.model_variant.ratios])

    def grid(self, grid_size: int) -> np.ndarray:
        if self.omega_dim == 1:
            lo, hi = self.omega_support
            return np.linspace(lo, hi, grid_size)
        (lo1, hi1), (lo2, hi2) = self.omega_support
        g1, g2 = np.meshgrid(np.linspace(lo1, hi1, grid_size), np.linspace(lo2, hi2, grid_size), indexing="ij")
        return np.column_stack([g1.ravel(), g2.ravel()])

    @cached_property
    def _monotone_ratio_index(self) -> int | None:
        # index of the first strictly monotone ratio component on a fine grid
        vals = self.ratio_values(self.grid(1001)) if self.omega_dim == 1 else None
        if vals is None:
            return None
        for j in range(vals.shape[1]):
            d = np.diff(vals[:, j])
            if np.all(d > 0) or np.all(d < 0):
                return j
        return None

    def to_config(self, prefix: str = "technology") -> dict[str, str]:
        """Flat ``dotted.key -> value`` mapping, readable by :func:`technology_from_config`."""
        if self.family_tag not in ("affine", "logistic"):
            raise ConfigError("only built-in technology families can be serialized")
        out = {
            f"{prefix}.family": self.family_tag,
            f"{prefix}.variant": self.variant,
            f"{prefix}.support": _fmt_seq(np.ravel(self.omega_support)),
        }
        for key in ("kappa", "center"):
            if key in self.params:
                out[f"{prefix}.{key}"] = repr(float(self.params[key]))
        for name in self.model_variant.coefficients:
            out[f"{prefix}.beta_{name}"] = _fmt_seq(self.params[f"beta_{name}"])
        return out


def _fmt_seq(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


def _normalize_support(support) -> tuple:
    arr = np.asarray(support, dtype=float)
    if arr.shape == (2,):
        lo, hi = float(arr[0]), float(arr[1])
        if not lo < hi:
            raise ConfigError(f"omega support must satisfy lo < hi, got {support}")
        return (lo, hi)
    if arr.shape in ((2, 2), (4,)):
        arr = arr.reshape(2, 2)
        if not np.all(arr[:, 0] < arr[:, 1]):
            raise ConfigError(f"omega support must satisfy lo < hi per axis, got {support}")
        return tuple((float(a), float(b)) for a, b in arr)
    raise ConfigError(f"cannot interpret omega support {support!r}")


# ---------------------------------------------------------------------------
# Built-in families
# ---------------------------------------------------------------------------

def _affine_fn(coefs: Sequence[float]) -> CoefficientFn:
    a = float(coefs[0])
    b = np.asarray(coefs[1:], dtype=float)

    def fn(w):
        w = np.asarray(w, dtype=float)
        if w.ndim == 2:
            return a + w @ b
        return a + b[0] * w

    return fn


def _logistic_fn(coefs: Sequence[float], kappa: float, center: float) -> CoefficientFn:
    a, b = float(coefs[0]), float(coefs[1])

    def fn(w):
        return a + b * special.expit(kappa * (np.asarray(w, dtype=float) - center))

    return fn


def _coef_kwargs(variant: Variant, coefs: Mapping[str, Sequence[float]], dim: int) -> dict:
    out = {}
    for name in variant.coefficients:
        key = f"beta_{name}"
        if key not in coefs:
            raise ConfigError(f"missing parameters for {key}")
        vals = [float(v) for v in np.ravel(coefs[key])]
        if len(vals) == 1:
            vals = vals + [0.0] * dim
        if len(vals) != dim + 1:
            raise ConfigError(f"{key} needs {dim + 1} numbers, got {len(vals)}")
        out[key] = vals
    return out


def affine_technology(
    support=(0.0, 1.0), variant: str = "baseline", **coefs: Sequence[float]
) -> TechnologySpec:
    """Each coefficient is ``a + b . omega``.

    Pass coefficients as ``beta_l=(a, b)``; a single number means a constant.
    For a two-dimensional support give ``(a, b1, b2)``.

    >>> spec = affine_technology(beta_l=0.25, beta_k=0.3, beta_m1=(0.2, 0.1),
    ...                          beta_m2=0.2, beta_0=(0.0, 1.0))
    >>> eval_betas(spec, 0.5).beta_m1
    0.25
    """
    var = get_variant(variant)
    dim = 2 if np.asarray(support, dtype=float).size == 4 else 1
    params = _coef_kwargs(var, coefs, dim)
    fns = {f"{k}_fn": _affine_fn(v) for k, v in params.items()}
    fns.setdefault("beta_m2_fn", None)
    return TechnologySpec(
        omega_support=support, family_tag="affine", variant=var.name, params=params, **fns
    )


def logistic_technology(
    support=(-3.0, 3.0),
    variant: str = "baseline",
    kappa: float = 1.0,
    center: float = 0.0,
    **coefs: Sequence[float],
) -> TechnologySpec:
    """Each coefficient is ``a + b * expit(kappa * (omega - center))``.

    Coefficients stay inside ``[a, a + b]`` for every latent value, so the
    diminishing-returns bound holds globally whenever it holds at the bounds.
    """
    var = get_variant(variant)
    if np.asarray(support, dtype=float).size != 2:
        raise ConfigError("the logistic family is defined for scalar latent technology only")
    params: dict[str, Any] = _coef_kwargs(var, coefs, 1)
    fns = {f"{k}_fn": _logistic_fn(v, kappa, center) for k, v in params.items()}
    fns.setdefault("beta_m2_fn", None)
    params.update(kappa=float(kappa), center=float(center))
    return TechnologySpec(
        omega_support=support, family_tag="logistic", variant=var.name, params=params, **fns
    )


def tech_a(variant: str = "baseline") -> TechnologySpec:
    """Canonical test technology, extended in the obvious way for variants.

    ``beta_l = 0.25``, ``beta_k = 0.30``, ``beta_m1 = 0.2 + 0.1 omega``,
    ``beta_m2 = 0.2``, ``beta_0 = omega`` on ``[0, 1]``. The two-labor variant
    adds ``beta_lu = 0.15``; the three-input variant adds
    ``beta_m3 = 0.1 + 0.05 omega`` and shrinks ``beta_m2`` to 0.15; the single-material variant uses
    ``beta_l = 0.2 + 0.1 omega`` with ``beta_m1 = 0.3``.
    """
    base = dict(beta_l=0.25, beta_k=0.30, beta_m1=(0.2, 0.1), beta_m2=0.2, beta_0=(0.0, 1.0))
    if variant == "two_labor":
        base.update(beta_lu=0.15)
    elif variant == "three_flexible":
        base.update(beta_m2=0.15, beta_m3=(0.1, 0.05))
    elif variant == "single_m_flexible_labor":
        base = dict(beta_l=(0.2, 0.1), beta_k=0.30, beta_m1=0.3, beta_0=(0.0, 1.0))
    return affine_technology(support=(0.0, 1.0), variant=variant, **base)


def technology_from_config(cfg: Mapping[str, Any], prefix: str = "technology") -> TechnologySpec:
    """Build a built-in technology from flat ``prefix.key`` entries."""
    def get(key, default=None):
        return cfg.get(f"{prefix}.{key}", default)

    family = get("family", "affine")
    variant = get("variant", "baseline")
    var = get_variant(variant)
    support = _as_floats(get("support", "0, 1"))
    coefs = {}
    for name in var.coefficients:
        raw = get(f"beta_{name}")
        if raw is None:
            raise ConfigError(f"missing config key {prefix}.beta_{name}")
        coefs[f"beta_{name}"] = _as_floats(raw)
    if family == "affine":
        return affine_technology(support=support, variant=variant, **coefs)
    if family == "logistic":
        return logistic_technology(
            support=support,
            variant=variant,
            kappa=float(get("kappa", 1.0)),
            center=float(get("center", 0.0)),
            **coefs,
        )
    raise ConfigError(f"unknown technology family {family!r}")


def _as_floats(raw) -> list[float]:
    if isinstance(raw, str):
        return [float(x) for x in raw.replace("(", "").replace(")", "").split(",") if x.strip()]
    return [float(x) for x in np.ravel(raw)]


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def eval_betas(spec: TechnologySpec, omega) -> CoefficientVector:
    """Coefficient values at a single latent point."""
    w = spec._as_omega_array(omega)
    if w.shape[0] != 1:
        raise DomainError("eval_betas takes a single latent value; use spec.evaluate for arrays")
    if not np.all(np.isfinite(w)) or not spec.contains(w)[0]:
        raise DomainError(f"omega={omega!r} lies outside the support {spec.omega_support}")
    b = spec.evaluate(w)
    kw = {f"beta_{k}": float(v[0]) for k, v in b.items()}
    kw.setdefault("beta_m2", None)
    return CoefficientVector(**kw)


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    first_violation: Any = None
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[AssumptionCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list[AssumptionCheck]:
        return [c for c in self.checks if not c.passed]


def _first(mask: np.ndarray, grid: np.ndarray):
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return None
    pt = grid[idx[0]]
    return float(pt) if np.ndim(pt) == 0 else tuple(float(x) for x in pt)


def validate_assumptions(spec: TechnologySpec, grid_size: int = 1001) -> ValidationReport:
    """Check positivity, diminishing flexible returns and ratio invertibility on a grid.

    Invertibility is checked through a sufficient condition: for scalar
    technology some cost-ratio component must be strictly monotone between
    consecutive grid points; for a latent pair, the Jacobian of the log-ratio
    pair map must keep one strict sign over the grid. Functions that are
    merely measurable can fool a grid; smooth ones cannot.
    """
    if grid_size < 2:
        raise ConfigError("grid_size must be at least 2")
    var = spec.model_variant
    grid = spec.grid(grid_size)
    b = spec.evaluate(grid)
    flex = np.column_stack([b[f] for f in var.flexible])

    checks = []
    bad = ~np.all(flex > 0, axis=1)
    checks.append(AssumptionCheck(
        "positive_flexible_elasticities", not bad.any(), _first(bad, grid),
        "every flexible elasticity must be strictly positive",
    ))
    bad = ~(flex.sum(axis=1) < 1)
    checks.append(AssumptionCheck(
        "finite_solution", not bad.any(), _first(bad, grid),
        "flexible elasticities must sum to less than one",
    ))

    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.column_stack([b[a] / b[c] for a, c in var.ratios])
    if spec.omega_dim == 1:
        # the three-input variant accepts any of its ratio maps, including m3/m1
        if var.name == "three_flexible":
            ratios = np.column_stack([ratios, b["m3"] / b["m1"]])
        ok = False
        first_bad = None
        for j in range(ratios.shape[1]):
            d = np.diff(ratios[:, j])
            inc, dec = d > 0, d < 0
            if inc.all() or dec.all():
                ok = True
                break
            if first_bad is None:
                viol = ~inc if inc.sum() >= dec.sum() else ~dec
                first_bad = _first(np.append(viol, False), grid)
        checks.append(AssumptionCheck(
            "non_collinear_heterogeneity", ok, None if ok else first_bad,
            "the flexible elasticity ratio must be strictly monotone in omega",
        ))
    else:
        g = grid_size
        lr = np.log(ratios).reshape(g, g, 2)
        (lo1, hi1), (lo2, hi2) = spec.omega_support
        d1 = np.gradient(lr, (hi1 - lo1) / (g - 1), axis=0)
        d2 = np.gradient(lr, (hi2 - lo2) / (g - 1), axis=1)
        det = (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]).ravel()
        finite = np.isfinite(det)
        ok = bool(finite.all() and (np.all(det > 0) or np.all(det < 0)))
        bad = ~finite | (det <= 0 if np.sum(det > 0) >= np.sum(det < 0) else det >= 0)
        checks.append(AssumptionCheck(
            "non_collinear_heterogeneity", ok, None if ok else _first(bad, grid),
            "the pair of elasticity ratios must be locally invertible in omega",
        ))
    return ValidationReport(tuple(checks))


def ratio_to_omega(spec: TechnologySpec, r):
    """Invert the elasticity-ratio map: latent value(s) for observed cost ratio(s).

    ``r`` is a scalar, a 1-D array of first ratios, or for the three-input
    variant an array of shape ``(n, 2)`` holding both ratios. Returns a float
    for scalar input, otherwise an array of shape ``(n,)`` (scalar latent) or
    ``(n, 2)`` (latent pair).
    """
    n_ratios = len(spec.model_variant.ratios)
    r_arr = np.asarray(r, dtype=float)
    scalar = r_arr.ndim == 0
    if spec.omega_dim == 2:
        r_arr = np.atleast_2d(r_arr).reshape(-1, 2)
    elif r_arr.ndim == 2 and r_arr.shape[1] == n_ratios and n_ratios > 1:
        pass
    else:
        r_arr = np.atleast_1d(r_arr).reshape(-1)
    if not np.all(np.isfinite(r_arr)) or np.any(r_arr <= 0):
        raise DomainError("cost ratios must be finite and strictly positive")

    if spec.omega_dim == 2:
        out = _invert_pair(spec, r_arr)
        return out[0] if scalar else out

    if r_arr.ndim == 2:
        # several ratios, scalar technology: invert one monotone component,
        # then demand the rest agree
        j = spec._monotone_ratio_index
        if j is None:
            raise DomainError("no cost-ratio component is strictly monotone in omega")
        omega = _invert_scalar(spec, r_arr[:, j], j)
        implied = spec.ratio_values(omega)
        if not np.allclose(implied, r_arr, rtol=1e-8, atol=0):
            raise DomainError("cost ratios are mutually inconsistent with a scalar latent technology")
    else:
        omega = _invert_scalar(spec, r_arr, 0)
    return float(omega[0]) if scalar else omega


def _ratio_image(spec: TechnologySpec, j: int) -> tuple[float, float]:
    lo, hi = spec.omega_support
    ends = spec.ratio_values(np.array([lo, hi]))[:, j]
    return float(np.min(ends)), float(np.max(ends))


def _invert_scalar(spec: TechnologySpec, r: np.ndarray, j: int) -> np.ndarray:
    rmin, rmax = _ratio_image(spec, j)
    slack = _IMAGE_SLACK * max(1.0, rmax)
    outside = (r < rmin - slack) | (r > rmax + slack)
    if outside.any():
        bad = r[outside][0]
        raise DomainError(
            f"cost ratio {float(bad)!r} is outside the attainable ratio range [{rmin!r}, {rmax!r}]"
        )
    lo, hi = spec.omega_support
    num, den = spec.model_variant.ratios[j]
    if spec.family_tag in ("affine", "logistic"):
        a1, b1 = spec.params[f"beta_{num}"]
        a2, b2 = spec.params[f"beta_{den}"]
        u = (a1 - r * a2) / (r * b2 - b1)
        if spec.family_tag == "logistic":
            kappa, center = spec.params["kappa"], spec.params["center"]
            with np.errstate(divide="ignore"):
                u = center + special.logit(u) / kappa
        return np.clip(u, lo, hi)

    def f(w, target):
        return float(spec.ratio_values(np.array([w]))[0, j]) - target

    out = np.empty_like(r)
    for i, target in enumerate(r):
        flo, fhi = f(lo, target), f(hi, target)
        if flo == 0.0:
            out[i] = lo
        elif fhi == 0.0:
            out[i] = hi
        elif np.sign(flo) == np.sign(fhi):
            # inside the slack band at an endpoint
            out[i] = lo if abs(flo) < abs(fhi) else hi
        else:
            out[i] = optimize.brentq(f, lo, hi, args=(target,), xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return out


def _invert_pair(spec: TechnologySpec, r: np.ndarray) -> np.ndarray:
    (lo1, hi1), (lo2, hi2) = spec.omega_support
    var = spec.model_variant
    if spec.family_tag == "affine":
        out = np.empty_like(r)
        for i, rr in enumerate(r):
            A = np.empty((2, 2))
            c = np.empty(2)
            for j, (num, den) in enumerate(var.ratios):
                pn = np.asarray(spec.params[f"beta_{num}"])
                pd = np.asarray(spec.params[f"beta_{den}"])
                A[j] = pn[1:] - rr[j] * pd[1:]
                c[j] = rr[j] * pd[0] - pn[0]
            try:
                out[i] = np.linalg.solve(A, c)
            except np.linalg.LinAlgError:
                raise DomainError(f"ratio pair {tuple(rr)} does not pin down a unique latent pair") from None
        _check_pair(spec, out, r)
        return out

    # nearest grid point in log-ratio space, then local least squares
    g = 201
    grid = spec.grid(g)
    table = np.log(spec.ratio_values(grid))
    out = np.empty_like(r)
    for i, rr in enumerate(np.log(r)):
        start = grid[np.argmin(np.sum((table - rr) ** 2, axis=1))]
        sol = optimize.least_squares(
            lambda w: np.log(spec.ratio_values(w[None, :])[0]) - rr,
            start,
            bounds=([lo1, lo2], [hi1, hi2]),
            xtol=1e-15, ftol=1e-15, gtol=1e-15,
        )
        out[i] = sol.x
    _check_pair(spec, out, r)
    return out


def _check_pair(spec: TechnologySpec, omega: np.ndarray, r: np.ndarray) -> None:
    inside = spec.contains(omega)
    implied = spec.ratio_values(omega)
    ok = inside & np.all(np.abs(implied - r) <= 1e-9 * np.maximum(1.0, r), axis=1)
    if not ok.all():
        bad = r[~ok][0]
        raise DomainError(f"ratio pair {tuple(bad)} is not attainable on the support {spec.omega_support}")
