"""Multivariate local-linear regression, bandwidth selection and product-kernel densities.

Local-linear fits reproduce affine functions exactly whatever the kernel or
bandwidth, so the slopes they return are unbiased for targets that are affine
in some coordinates. The identification pipeline relies on that.

Kernel weights used for regression are scaled to peak at one, so their sum
(the effective sample size) reads as a local observation count. Density
estimates use properly normalised kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigError, DataError, InsufficientDataError

__all__ = [
    "KERNELS",
    "FLAG_OK",
    "FLAG_RIDGE",
    "FLAG_TRIMMED",
    "FLAG_NAMES",
    "SmootherFit",
    "LocalFits",
    "BandwidthSpec",
    "LocalLinearRegression",
    "ProductKernelDensity",
    "fit_local_linear",
    "select_bandwidth",
    "rule_of_thumb_bandwidth",
    "estimate_density",
]

KERNELS = ("epanechnikov", "gaussian")

FLAG_OK, FLAG_RIDGE, FLAG_TRIMMED = 0, 1, 2
FLAG_NAMES = {FLAG_OK: "ok", FLAG_RIDGE: "ridge_applied", FLAG_TRIMMED: "trimmed"}

RCOND_MIN = 1e-10
RIDGE_SCALE = 1e-8
CV_GRID = tuple(2.0 ** (np.arange(-4, 5) / 2.0))  # 0.25 ... 4, nine points
_CHUNK_ELEMENTS = 2_000_000
# Rule-of-thumb multipliers for density estimation. 1.06 is calibrated for a
# unit-variance Gaussian kernel; an Epanechnikov kernel on [-h, h] has
# standard deviation h / sqrt(5), so the same smoothing needs sqrt(5) times it.
DENSITY_RULE_CONSTANT = {"gaussian": 1.06, "epanechnikov": 1.06 * np.sqrt(5.0)}


def _unit_kernel(U: np.ndarray, kernel: str) -> np.ndarray:
    if kernel == "epanechnikov":
        return np.prod(np.clip(1.0 - U * U, 0.0, None), axis=-1)
    if kernel == "gaussian":
        return np.exp(-0.5 * np.sum(U * U, axis=-1))
    raise ConfigError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")


def _kernel_norm(kernel: str, d: int) -> float:
    # integral of the unit-peak product kernel over R^d
    if kernel == "epanechnikov":
        return (4.0 / 3.0) ** d
    return (2.0 * np.pi) ** (d / 2.0)


def _check_kernel(kernel: str) -> None:
    if kernel not in KERNELS:
        raise ConfigError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")


def _as_matrix(X, name="X") -> np.ndarray:
    try:
        return check_array(X, dtype=float, ensure_2d=True, ensure_min_samples=1)
    except ValueError as exc:
        raise DataError(f"{name}: {exc}") from None


def _as_vector(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != n:
        raise DataError(f"response has {y.shape[0]} rows, regressors have {n}")
    if not np.all(np.isfinite(y)):
        raise DataError("response contains NaN or infinite values")
    return y


@dataclass(frozen=True)
class SmootherFit:
    """Local-linear fit at one query point."""

    estimate: float
    gradient: np.ndarray
    effective_sample_size: float
    condition_flag: str

    @property
    def trimmed(self) -> bool:
        return self.condition_flag == "trimmed"


@dataclass
class LocalFits:
    """Local-linear fits at many query points, as arrays.

    ``estimate`` and ``gradient`` are NaN where ``flag == FLAG_TRIMMED``.
    """

    estimate: np.ndarray
    gradient: np.ndarray
    ess: np.ndarray
    flag: np.ndarray
    rcond: np.ndarray = field(repr=False, default=None)
    # kernel-weighted mean squared residual around the local line
    resid_var: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return self.estimate.shape[0]

    def __getitem__(self, i) -> SmootherFit:
        return SmootherFit(
            float(self.estimate[i]), self.gradient[i].copy(), float(self.ess[i]),
            FLAG_NAMES[int(self.flag[i])],
        )

    def flag_counts(self) -> dict[str, int]:
        return {name: int(np.sum(self.flag == code)) for code, name in FLAG_NAMES.items()}


def rule_of_thumb_bandwidth(X, constant: float = 1.06) -> np.ndarray:
    """``constant * sd(X_j) * n^(-1/(4+d))`` per column.

    Columns without variation get bandwidth 1: every observation is equally
    close in that direction, so any positive value gives the same weights.
    """
    X = _as_matrix(X)
    n, d = X.shape
    if n < 2:
        raise InsufficientDataError("rule-of-thumb bandwidth needs at least 2 observations")
    sd = X.std(axis=0, ddof=1)
    h = constant * sd * n ** (-1.0 / (4 + d))
    return np.where(sd > 0, h, 1.0)


def _neighbors(tree: cKDTree, Q: np.ndarray, h: np.ndarray):
    """Training rows within the kernel support of each query, in CSR form.

    Returns ``(indptr, indices)``: the neighbours of query ``i`` are
    ``indices[indptr[i]:indptr[i + 1]]``.
    """
    pairs = cKDTree(Q / h).sparse_distance_matrix(tree, 1.0, p=np.inf, output_type="ndarray")
    qi = np.ascontiguousarray(pairs["i"])
    order = np.argsort(qi, kind="stable")
    indptr = np.concatenate([[0], np.cumsum(np.bincount(qi, minlength=Q.shape[0]))])
    return indptr, np.ascontiguousarray(pairs["j"])[order]


def _local_linear_batch(X, y, Q, h, kernel, min_ess, exclude=None, neighbors=None):
    """Core solver.

    ``exclude[i]`` is a training row to drop for query ``i`` (or -1);
    ``neighbors`` is an optional CSR pair from :func:`_neighbors`.
    """
    nq, d = Q.shape
    p = d + 1
    est = np.full(nq, np.nan)
    grad = np.full((nq, d), np.nan)
    ess = np.zeros(nq)
    flag = np.full(nq, FLAG_TRIMMED, dtype=np.int8)
    rcond = np.zeros(nq)
    resid_var = np.full(nq, np.nan)

    if neighbors is None:
        counts = np.full(nq, X.shape[0])
    else:
        indptr, indices = neighbors
        counts = np.diff(indptr)
    # process queries in order of neighbour count to keep padding small
    order = np.argsort(counts, kind="stable")
    sorted_counts = np.maximum(counts[order], 1)
    budget = _CHUNK_ELEMENTS // p
    start = 0
    while start < nq:
        cost = sorted_counts[start:] * np.arange(1, nq - start + 1)
        stop = start + max(1, int(np.searchsorted(cost, budget, side="right")))
        M = int(sorted_counts[stop - 1])
        rows = order[start:stop]
        c = rows.size
        if neighbors is None:
            idx = np.broadcast_to(np.arange(X.shape[0]), (c, X.shape[0]))
            mask = np.ones((c, X.shape[0]), dtype=bool)
        else:
            offs = np.arange(M)
            mask = offs[None, :] < counts[rows][:, None]
            pos = np.minimum(indptr[rows][:, None] + offs[None, :], max(indices.size - 1, 0))
            idx = indices[pos] if indices.size else np.zeros((c, M), dtype=np.int64)
        if exclude is not None:
            mask &= idx != exclude[rows][:, None]
        U = (X[idx] - Q[rows][:, None, :]) / h
        w = _unit_kernel(U, kernel) * mask
        e = w.sum(axis=1)
        ess[rows] = e
        keep = e >= min_ess
        if np.any(keep):
            Uk, wk, yk = U[keep], w[keep], y[idx[keep]]
            Z = np.concatenate([np.ones(Uk.shape[:2] + (1,)), Uk], axis=2)
            WZ = wk[:, :, None] * Z
            WZt = WZ.transpose(0, 2, 1)
            A = WZt @ Z
            b = (WZt @ yk[:, :, None])[:, :, 0]
            with np.errstate(divide="ignore", invalid="ignore"):
                rc = 1.0 / np.linalg.cond(A)
            rc = np.nan_to_num(rc, nan=0.0)
            ridge = rc < RCOND_MIN
            if np.any(ridge):
                lam = RIDGE_SCALE * np.trace(A[ridge], axis1=1, axis2=2) / p
                A[ridge] += lam[:, None, None] * np.eye(p)
            beta = np.linalg.solve(A, b[:, :, None])[:, :, 0]
            kr = rows[keep]
            res = yk - (Z @ beta[:, :, None])[:, :, 0]
            resid_var[kr] = np.sum(wk * res * res, axis=1) / e[keep]
            est[kr] = beta[:, 0]
            grad[kr] = beta[:, 1:] / h
            flag[kr] = np.where(ridge, FLAG_RIDGE, FLAG_OK)
            rcond[kr] = rc
        start = stop
    return LocalFits(est, grad, ess, flag, rcond, resid_var)


@dataclass(frozen=True)
class BandwidthSpec:
    """Bandwidth rule for one regression stage.

    ``rule`` is ``"rule_of_thumb"``, ``"fixed"`` (with ``bandwidths``) or
    ``"loo_cv"`` (leave-one-out CV over :data:`CV_GRID` times the rule of
    thumb, on ``cv_subsample_size`` rows).
    """

    rule: str = "rule_of_thumb"
    bandwidths: tuple[float, ...] | None = None
    cv_subsample_size: int = 500
    constant: float = 1.06

    def __post_init__(self):
        if self.rule not in ("rule_of_thumb", "fixed", "loo_cv"):
            raise ConfigError(f"unknown bandwidth rule {self.rule!r}")
        if self.rule == "fixed":
            if self.bandwidths is None or not all(b > 0 for b in self.bandwidths):
                raise ConfigError("fixed bandwidths must all be positive")
        if self.cv_subsample_size < 1:
            raise ConfigError("cv_subsample_size must be positive")


def select_bandwidth(X, y, spec: BandwidthSpec, kernel: str = "epanechnikov",
                     min_ess: float = 15.0, random_state: int = 0) -> np.ndarray:
    """Per-dimension bandwidths for regressing ``y`` on ``X``.

    Leave-one-out CV ties (within ``1e-10 * var(y)``) go to the larger
    bandwidth. Candidates that leave any held-out point trimmed are
    discarded.
    """
    X = _as_matrix(X)
    n, d = X.shape
    if spec.rule == "fixed":
        h = np.asarray(spec.bandwidths, dtype=float)
        if h.shape != (d,):
            raise ConfigError(f"expected {d} bandwidths, got {h.shape[0]}")
        return h.copy()
    if spec.rule == "rule_of_thumb":
        if n < 20:
            raise InsufficientDataError("rule-of-thumb bandwidth needs at least 20 observations")
        return rule_of_thumb_bandwidth(X, spec.constant)

    if n < 50:
        raise InsufficientDataError("cross-validated bandwidth needs at least 50 observations")
    y = _as_vector(y, n)
    base = rule_of_thumb_bandwidth(X, spec.constant)
    m = min(spec.cv_subsample_size, n)
    rng = np.random.default_rng(random_state)
    sub = np.sort(rng.choice(n, size=m, replace=False)) if m < n else np.arange(n)
    scores = []
    for mult in CV_GRID:
        h = base * mult
        fits = _fit_at(X, y, X[sub], h, kernel, min_ess, exclude=sub)
        if np.any(fits.flag == FLAG_TRIMMED):
            scores.append(np.inf)
        else:
            scores.append(float(np.mean((y[sub] - fits.estimate) ** 2)))
    scores = np.asarray(scores)
    if not np.any(np.isfinite(scores)):
        raise InsufficientDataError("every cross-validation bandwidth left held-out points trimmed")
    tol = 1e-10 * max(float(np.var(y)), np.finfo(float).tiny)
    best = np.flatnonzero(scores <= np.min(scores) + tol)[-1]
    return base * CV_GRID[best]


def _fit_at(X, y, Q, h, kernel, min_ess, exclude=None, tree=None) -> LocalFits:
    neighbors = None
    if kernel == "epanechnikov":
        if tree is None:
            tree = cKDTree(X / h)
        neighbors = _neighbors(tree, Q, h)
    return _local_linear_batch(X, y, Q, h, kernel, min_ess, exclude=exclude, neighbors=neighbors)


def fit_local_linear(X, y, query, bandwidths, kernel: str = "epanechnikov",
                     min_ess: float = 15.0) -> SmootherFit:
    """Local-linear fit of ``y`` on ``X`` at a single query point.

    Weighted least squares of ``y`` on ``(1, X - query)`` with product-kernel
    weights. The intercept is the fitted conditional mean, the slopes its
    partial derivatives. A near-singular local design (reciprocal condition
    number of the weighted cross-product matrix below ``1e-10``) gets a small
    ridge and is flagged ``ridge_applied``; an effective sample size below
    ``min_ess`` gives a ``trimmed`` fit with no estimate.
    """
    _check_kernel(kernel)
    X = _as_matrix(X)
    n, d = X.shape
    if n <= d + 1:
        raise InsufficientDataError(f"need more than {d + 1} observations for {d} regressors, got {n}")
    y = _as_vector(y, n)
    q = _as_matrix(np.atleast_2d(np.asarray(query, dtype=float)), "query")
    h = np.asarray(bandwidths, dtype=float).reshape(-1)
    if q.shape[1] != d or h.shape[0] != d:
        raise DataError(f"query and bandwidths must have length {d}")
    if not np.all(h > 0):
        raise ConfigError("bandwidths must be positive")
    return _fit_at(X, y, q[:1], h, kernel, min_ess)[0]


class LocalLinearRegression(RegressorMixin, BaseEstimator):
    """Local-linear kernel regression with per-dimension bandwidths.

    Parameters
    ----------
    kernel : {"epanechnikov", "gaussian"}
    bandwidth : {"rule_of_thumb", "loo_cv"} or array-like of shape (d,)
        Fixed bandwidths, or a rule evaluated at ``fit`` time.
    min_ess : float
        Fits whose kernel-weight sum falls below this are trimmed.
    cv_subsample_size : int
        Held-out rows used by ``"loo_cv"``.
    random_state : int
        Seeds the CV subsample.

    Attributes
    ----------
    bandwidth_ : ndarray of shape (d,)
    n_features_in_ : int

    Examples
    --------
    >>> rng = np.random.default_rng(0)
    >>> X = rng.uniform(size=(200, 2))
    >>> y = 1 + 2 * X[:, 0] - 3 * X[:, 1]
    >>> model = LocalLinearRegression(bandwidth=[0.3, 0.3]).fit(X, y)
    >>> np.round(model.local_fit([[0.5, 0.5]]).gradient, 10)
    array([[ 2., -3.]])
    """

    def __init__(self, kernel="epanechnikov", bandwidth="rule_of_thumb", min_ess=15.0,
                 cv_subsample_size=500, random_state=0):
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.min_ess = min_ess
        self.cv_subsample_size = cv_subsample_size
        self.random_state = random_state

    def _bandwidth_spec(self) -> BandwidthSpec:
        if isinstance(self.bandwidth, str):
            return BandwidthSpec(rule=self.bandwidth, cv_subsample_size=self.cv_subsample_size)
        return BandwidthSpec(rule="fixed", bandwidths=tuple(np.ravel(self.bandwidth).astype(float)))

    def fit(self, X, y):
        _check_kernel(self.kernel)
        X = _as_matrix(X)
        n, d = X.shape
        if n <= d + 1:
            raise InsufficientDataError(f"need more than {d + 1} observations for {d} regressors, got {n}")
        y = _as_vector(y, n)
        self.bandwidth_ = select_bandwidth(
            X, y, self._bandwidth_spec(), kernel=self.kernel, min_ess=self.min_ess,
            random_state=self.random_state,
        )
        self.X_, self.y_ = X, y
        self.n_features_in_ = d
        self._tree = cKDTree(X / self.bandwidth_) if self.kernel == "epanechnikov" else None
        return self

    def local_fit(self, X, exclude=None) -> LocalFits:
        """Level, gradient, effective sample size and flag at each row of ``X``.

        ``exclude``, when given, holds one training-row index per query to
        leave out (``-1`` for none).
        """
        check_is_fitted(self, "bandwidth_")
        Q = _as_matrix(X, "query")
        if Q.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} columns, got {Q.shape[1]}")
        ex = None if exclude is None else np.asarray(exclude, dtype=np.int64)
        return _fit_at(self.X_, self.y_, Q, self.bandwidth_, self.kernel, self.min_ess,
                       exclude=ex, tree=self._tree)

    def predict(self, X):
        return self.local_fit(X).estimate

    def gradient(self, X):
        return self.local_fit(X).gradient


class ProductKernelDensity(BaseEstimator):
    """Product-kernel density estimator with per-dimension bandwidths.

    ``bandwidth="rule_of_thumb"`` uses :data:`DENSITY_RULE_CONSTANT` for the
    chosen kernel, so both kernels smooth by the same amount.
    """

    def __init__(self, kernel="epanechnikov", bandwidth="rule_of_thumb"):
        self.kernel = kernel
        self.bandwidth = bandwidth

    def fit(self, X, y=None):
        _check_kernel(self.kernel)
        X = _as_matrix(X)
        n, d = X.shape
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "rule_of_thumb":
                raise ConfigError("density bandwidth must be 'rule_of_thumb' or fixed values")
            self.bandwidth_ = rule_of_thumb_bandwidth(X, DENSITY_RULE_CONSTANT[self.kernel])
        else:
            self.bandwidth_ = np.asarray(self.bandwidth, dtype=float).reshape(-1)
            if self.bandwidth_.shape[0] != d or not np.all(self.bandwidth_ > 0):
                raise ConfigError(f"need {d} positive bandwidths")
        self.X_ = X
        self.n_features_in_ = d
        self._tree = cKDTree(X / self.bandwidth_) if self.kernel == "epanechnikov" else None
        return self

    def density(self, X) -> np.ndarray:
        check_is_fitted(self, "bandwidth_")
        Q = _as_matrix(X, "query")
        h = self.bandwidth_
        n, d = self.X_.shape
        scale = 1.0 / (n * np.prod(h) * _kernel_norm(self.kernel, d))
        out = np.empty(Q.shape[0])
        if self._tree is not None:
            indptr, indices = _neighbors(self._tree, Q, h)
            rows = np.repeat(np.arange(Q.shape[0]), np.diff(indptr))
            w = _unit_kernel((self.X_[indices] - Q[rows]) / h, self.kernel)
            out[:] = np.bincount(rows, weights=w, minlength=Q.shape[0])
        else:
            step = max(1, _CHUNK_ELEMENTS // (n * d))
            for s in range(0, Q.shape[0], step):
                U = (self.X_[None, :, :] - Q[s:s + step, None, :]) / h
                out[s:s + step] = _unit_kernel(U, self.kernel).sum(axis=1)
        return out * scale

    def score_samples(self, X) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.density(X))


def estimate_density(X, query, bandwidths, kernel: str = "epanechnikov") -> float:
    """Product-kernel density estimate at one query point."""
    X = _as_matrix(X)
    n, d = X.shape
    if n <= d + 1:
        raise InsufficientDataError(f"need more than {d + 1} observations, got {n}")
    kde = ProductKernelDensity(kernel=kernel, bandwidth=np.asarray(bandwidths, dtype=float)).fit(X)
    return float(kde.density(np.atleast_2d(np.asarray(query, dtype=float)))[0])
