"""Competing estimators: two-stage projection and spline-penalized least squares.

Both reduce to a row-weighted lasso handled by :mod:`pairdiff.solver`:

* projection: residualize ``Y`` and every column of ``X`` on ``W`` with a
  leave-one-out Nadaraya-Watson smoother, then lasso the residuals;
* B-spline: profile a ridge-penalized B-spline fit of ``g`` out of the
  joint least-squares problem, leaving a lasso in ``beta`` alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import BSpline

from .core import Dataset, kernel_pairs
from .errors import DataError, DegenerateKnotsError, EmptySmoothingWindowError
from .kernel import Kernel, get_kernel
from .solver import FitConfig, FitResult, QuadraticDesign, cv_design, row_design, row_folds, \
    solve_design

GCV_MU_GRID = np.logspace(-4, 1, 11)


def silverman_bandwidth(W) -> float:
    W = np.asarray(W, dtype=float)
    return 1.06 * float(np.std(W, ddof=1)) * W.shape[0] ** (-0.2)


def nw_smooth(W, Z, bandwidth: float, kernel: Kernel | str | None = None,
              leave_one_out: bool = True) -> np.ndarray:
    """Nadaraya-Watson fit of each column of ``Z`` on ``W`` at the observed ``W``.

    Raises EmptySmoothingWindowError if some observation has no kernel
    neighbour (other than itself when ``leave_one_out``).
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    i, j, kval = kernel_pairs(W, bandwidth, kernel)
    A = sp.coo_matrix((np.r_[kval, kval], (np.r_[i, j], np.r_[j, i])), shape=(n, n)).tocsr()
    if not leave_one_out:
        A = A + sp.identity(n) * float(get_kernel(kernel)(0.0))
    denom = np.asarray(A.sum(axis=1)).ravel()
    empty = np.flatnonzero(denom <= 0)
    if empty.size:
        raise EmptySmoothingWindowError(
            f"empty smoothing window: {empty.size} observation(s) have no neighbour within "
            f"bandwidth {bandwidth:.4g} (first at W = {W[empty[0]]:.6g}); increase the bandwidth")
    Z = np.asarray(Z, dtype=float)
    out = A @ Z.reshape(n, -1) / denom[:, None]
    return out.reshape(Z.shape)


def nw_curve(W, z, grid, bandwidth: float, kernel: Kernel | str | None = None) -> np.ndarray:
    """Nadaraya-Watson estimate of ``E[z | W = w]`` at every ``w`` in ``grid``.

    Grid points with an empty kernel window get NaN.
    """
    kernel = get_kernel(kernel)
    W = np.asarray(W, dtype=float)
    z = np.asarray(z, dtype=float)
    K = kernel((np.asarray(grid, dtype=float)[:, None] - W[None, :]) / bandwidth)
    num, den = K @ z, K.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


@dataclass
class ProjectionConfig:
    smoother_bandwidth: float | str = "auto"
    lam: float | str = "cv"
    cv_folds: int = 10
    kernel: str = "box"

    def __post_init__(self):
        if self.smoother_bandwidth != "auto" and not float(self.smoother_bandwidth) > 0:
            raise ValueError("smoother bandwidth must be positive")


@dataclass
class SplineConfig:
    degree: int = 3
    n_interior_knots: int = 6
    mu: float | str = "gcv"
    lam: float | str = "cv"

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("spline degree must be at least 1")
        if self.n_interior_knots < 0:
            raise ValueError("number of interior knots must be nonnegative")
        if self.mu != "gcv" and float(self.mu) < 0:
            raise ValueError("mu must be nonnegative")


def _fit_rows(design: QuadraticDesign, n: int, lam, config: FitConfig, h, method):
    if lam == "cv":
        _, fit, curve = cv_design(design, list(row_folds(n, config)), config, h=h, method=method)
        fit.extra["cv_curve"] = curve
        return fit
    return solve_design(design, float(lam), config, h=h, method=method)


def projection_design(data: Dataset, config: ProjectionConfig | None = None,
                      standardize: bool = False):
    """Stage-one residuals as a row design; returns ``(design, bandwidth)``."""
    config = config or ProjectionConfig()
    if data.n < 10:
        raise DataError(f"projection needs at least 10 observations, got {data.n}")
    bw = (silverman_bandwidth(data.W) if config.smoother_bandwidth == "auto"
          else float(config.smoother_bandwidth))
    Z = np.column_stack([data.Y, data.X])
    V = Z - nw_smooth(data.W, Z, bw, config.kernel)
    return row_design(V[:, 1:], V[:, 0], standardize=standardize), bw


def projection_fit(data: Dataset, config: ProjectionConfig | None = None,
                   fit_config: FitConfig | None = None) -> FitResult:
    config = config or ProjectionConfig()
    fit_config = fit_config or FitConfig(cv_folds=config.cv_folds)
    design, bw = projection_design(data, config, fit_config.standardize)
    return _fit_rows(design, data.n, config.lam, fit_config, bw, "projection")


@dataclass
class SplineModel:
    """Fitted nonparametric part ``g(w) = B(w)' theta``."""

    knots: np.ndarray
    degree: int
    theta: np.ndarray
    mu: float

    def g_hat(self, w):
        return BSpline(self.knots, self.theta, self.degree, extrapolate=True)(np.asarray(w, float))


def bspline_basis(W, degree: int = 3, n_interior_knots: int = 6):
    """Clamped B-spline basis on ``[min W, max W]`` with quantile interior knots.

    The basis has ``n_interior_knots + degree + 1`` columns and spans the
    constants. Returns ``(B, knots)``.
    """
    W = np.asarray(W, dtype=float)
    lo, hi = float(W.min()), float(W.max())
    inner = np.quantile(W, np.linspace(0, 1, n_interior_knots + 2)[1:-1])
    breaks = np.r_[lo, inner, hi]
    if np.any(np.diff(breaks) <= 0):
        raise DegenerateKnotsError(
            "degenerate knots: quantile knots of W are not strictly increasing "
            "(too many tied W values); reduce the number of interior knots")
    knots = np.r_[[lo] * degree, breaks, [hi] * degree]
    B = BSpline.design_matrix(W, knots, degree).toarray()
    return B, knots


class _SplineSmoother:
    """Ridge smoother ``S = B (B'B + n mu^2 I)^{-1} B'`` through a thin SVD of ``B``."""

    def __init__(self, B):
        self.n = B.shape[0]
        self.U, self.d, self.Vt = np.linalg.svd(B, full_matrices=False)

    def shrink(self, mu):
        return self.d ** 2 / (self.d ** 2 + self.n * mu * mu)

    def check(self, mu):
        if mu == 0 and self.d.min() <= 1e-10 * self.d.max():
            raise DegenerateKnotsError("degenerate knots: singular spline basis with mu = 0")

    def gcv(self, y, mu) -> float:
        f = self.shrink(mu)
        resid = y - self.U @ (f * (self.U.T @ y))
        return self.n * float(resid @ resid) / (self.n - f.sum()) ** 2

    def sqrt_complement(self, Z, mu):
        """``(I - S)^{1/2} Z``; its Gram matrix is the profiled quadratic form."""
        f = self.shrink(mu)
        c = 1.0 - np.sqrt(np.clip(1.0 - f, 0.0, None))
        UZ = self.U.T @ Z
        return Z - self.U @ (c[:, None] * UZ if Z.ndim == 2 else c * UZ)

    def coef(self, r, mu):
        """Ridge coefficients ``(B'B + n mu^2 I)^{-1} B' r``."""
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(self.d > 0, self.d / (self.d ** 2 + self.n * mu * mu), 0.0)
        return self.Vt.T @ (g * (self.U.T @ r))


def bspline_design(data: Dataset, config: SplineConfig | None = None,
                   standardize: bool = False):
    """Profiled lasso design; returns ``(design, smoother, knots, mu)``.

    With ``R = (I - S)^{1/2}`` the profiled objective is
    ``(1/n) ||R (Y - X beta)||^2 + lam ||beta||_1``.
    """
    config = config or SplineConfig()
    n_basis = config.n_interior_knots + config.degree + 1
    if data.n <= n_basis:
        raise DataError(f"B-spline fit needs n > {n_basis} basis functions, got n = {data.n}")
    B, knots = bspline_basis(data.W, config.degree, config.n_interior_knots)
    sm = _SplineSmoother(B)
    if config.mu == "gcv":
        scores = [sm.gcv(data.Y, mu) for mu in GCV_MU_GRID]
        mu = float(GCV_MU_GRID[int(np.argmin(scores))])
    else:
        mu = float(config.mu)
    sm.check(mu)
    design = row_design(sm.sqrt_complement(data.X, mu), sm.sqrt_complement(data.Y, mu),
                        standardize=standardize)
    return design, sm, knots, mu


def bspline_fit(data: Dataset, config: SplineConfig | None = None,
                fit_config: FitConfig | None = None) -> FitResult:
    """Lasso in ``beta`` with the spline part profiled out.

    ``fit.extra["spline"]`` holds the :class:`SplineModel` for ``g``.
    """
    config = config or SplineConfig()
    fit_config = fit_config or FitConfig()
    design, sm, knots, mu = bspline_design(data, config, fit_config.standardize)
    fit = _fit_rows(design, data.n, config.lam, fit_config, None, "bspline")
    theta = sm.coef(data.Y - data.X @ fit.beta_hat, mu)
    fit.extra["spline"] = SplineModel(knots, config.degree, theta, mu)
    fit.extra["mu"] = mu
    return fit
