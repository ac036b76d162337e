"""Pathwise coordinate descent for the l1-penalized pairwise loss.

Every lasso problem in this package has the form

    minimize  (y - X b)' L (y - X b) + lam * ||b||_1

with ``L`` symmetric positive semidefinite: the pair-graph Laplacian for
the pairwise estimator, a diagonal of observation weights for the
baselines. :class:`QuadraticDesign` caches ``M = L X`` so that a coordinate
update costs ``O(n)`` on an ``n``-vector of residuals ``r = y - X b``;
``grad_k = -2 M_k' r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from .core import Dataset, PairSet, build_pairs, pair_laplacian, require_pairs
from .errors import InsufficientPairsError
from .kernel import Kernel, get_kernel

CV_POLICIES = ("pair", "obs")
# coordinate passes between attempts to solve the active-set equations exactly
NEWTON_EVERY = 10
CV_CHUNK = 5
CV_PATIENCE = 10


def default_bandwidth(n: int, p: int) -> float:
    """Tuning-insensitive bandwidth ``2 sqrt(ln p / n)``."""
    if n < 2 or p < 2:
        raise ValueError(f"default bandwidth needs n >= 2 and p >= 2, got n={n}, p={p}")
    return 2.0 * math.sqrt(math.log(p) / n)


def rate_bandwidth(n: int, p: int) -> float:
    """``sqrt(ln p / n)``, half the default."""
    return 0.5 * default_bandwidth(n, p)


BANDWIDTH_RULES = {"auto": default_bandwidth, "rate": rate_bandwidth}


def resolve_bandwidth(h, n: int, p: int) -> float:
    if isinstance(h, str):
        try:
            return BANDWIDTH_RULES[h](n, p)
        except KeyError:
            return float(h)
    return float(h)


def soft_threshold(z, gamma):
    if np.any(np.asarray(gamma) < 0):
        raise ValueError("threshold must be nonnegative")
    out = np.sign(z) * np.maximum(np.abs(z) - gamma, 0.0)
    return out if np.ndim(out) else float(out)


@dataclass
class FitConfig:
    h: float | str = "auto"
    lam: float | str = "cv"
    tol: float = 1e-7
    max_iter: int = 100_000
    n_lambda: int = 100
    lambda_min_ratio: float = 1e-3
    cv_folds: int = 10
    cv_seed: int = 0
    cv_policy: str = "obs"
    standardize: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.lambda_min_ratio < 1:
            raise ValueError("lambda_min_ratio must lie in (0, 1)")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if self.n_lambda < 1 or self.max_iter < 1:
            raise ValueError("n_lambda and max_iter must be positive")
        if self.cv_policy not in CV_POLICIES:
            raise ValueError(f"cv_policy must be one of {CV_POLICIES}")


@dataclass
class FitResult:
    beta_hat: np.ndarray
    lambda_used: float
    h_used: float | None
    active_set: np.ndarray
    n_iterations: int
    converged: bool
    objective: float
    kkt_violation: float
    method: str = "prd"
    extra: dict = field(default_factory=dict)

    @property
    def support_size(self) -> int:
        return int(self.active_set.shape[0])


class QuadraticDesign:
    """The quadratic ``(y - X b)' L (y - X b)`` with cached ``L X`` and ``L y``.

    ``weight_total`` is the total observation/pair weight; it sets the
    column scales used when ``standardize`` is on.
    """

    def __init__(self, X, y, L, weight_total=1.0, scale=None):
        X = np.asarray(X, dtype=float)
        self.scale = np.ones(X.shape[1]) if scale is None else np.asarray(scale, float)
        self.X = np.asfortranarray(X / self.scale)
        self.y = np.ascontiguousarray(y, dtype=float)
        self.L = L
        self.M = np.asfortranarray(np.asarray(L @ self.X))
        self.Ly = np.asarray(L @ self.y).ravel()
        self.yLy = float(self.y @ self.Ly)
        self.curv = 2.0 * np.einsum("ij,ij->j", self.X, self.M)
        # L is PSD, so tiny negative curvature is rounding
        self.curv[self.curv <= 1e-14 * max(1.0, float(np.max(np.abs(self.curv), initial=0)))] = 0.0
        self.weight_total = float(weight_total)

    @property
    def p(self):
        return self.X.shape[1]

    def lambda_max(self) -> float:
        return float(np.max(np.abs(2.0 * (self.X.T @ self.Ly)), initial=0.0))

    def loss(self, b) -> float:
        r = self.y - self.X @ b
        return float(r @ np.asarray(self.L @ r).ravel())

    def gradient(self, b) -> np.ndarray:
        r = self.y - self.X @ b
        return -2.0 * (self.M.T @ r)

    def column_scale(self) -> np.ndarray:
        s = np.sqrt(self.curv / (2.0 * self.weight_total))
        s[s == 0] = 1.0
        return s


def pair_design(data: Dataset, pairs: PairSet, standardize=False, scale=None) -> QuadraticDesign:
    L = pairs.laplacian()
    wt = float(np.sum(pairs.weight))
    if standardize and scale is None:
        scale = QuadraticDesign(data.X, data.Y, L, wt).column_scale()
    return QuadraticDesign(data.X, data.Y, L, wt, scale)


def row_design(X, y, weights=None, standardize=False, scale=None) -> QuadraticDesign:
    """Ordinary weighted rows; default weights ``1/n`` give the mean squared loss."""
    n = X.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float)
    L = sp.diags(w)
    if standardize and scale is None:
        scale = QuadraticDesign(X, y, L, w.sum()).column_scale()
    return QuadraticDesign(X, y, L, w.sum(), scale)


@numba.njit(cache=True)
def _kkt(grad, beta, lam, curv):
    worst = 0.0
    for k in range(beta.shape[0]):
        if curv[k] == 0.0:
            continue
        if beta[k] != 0.0:
            v = abs(grad[k] + lam * (1.0 if beta[k] > 0 else -1.0))
        else:
            v = abs(grad[k]) - lam
        if v > worst:
            worst = v
    return worst


@numba.njit(cache=True)
def _newton_step(X, M, y, beta, lam, curv):
    """Solve the stationarity equations on the current active set.

    Returns the candidate only if it keeps the active signs; otherwise the
    input is returned unchanged.
    """
    idx = np.flatnonzero(beta)
    m = idx.shape[0]
    if m == 0:
        return beta, False
    XA = np.empty((X.shape[0], m))
    MA = np.empty((X.shape[0], m))
    s = np.empty(m)
    for t in range(m):
        XA[:, t] = X[:, idx[t]]
        MA[:, t] = M[:, idx[t]]
        s[t] = 1.0 if beta[idx[t]] > 0 else -1.0
    G = XA.T @ MA
    rhs = MA.T @ y - 0.5 * lam * s
    sol = np.linalg.lstsq(G, rhs)[0]
    for t in range(m):
        if sol[t] * s[t] <= 0.0:
            return beta, False
    out = beta.copy()
    for t in range(m):
        out[idx[t]] = sol[t]
    return out, True


@numba.njit(cache=True)
def _cd_path(X, M, y, curv, lambdas, beta0, tol, max_iter, newton_every):
    n, p = X.shape
    nl = lambdas.shape[0]
    betas = np.zeros((nl, p))
    iters = np.zeros(nl, dtype=np.int64)
    conv = np.zeros(nl, dtype=np.bool_)
    kkts = np.zeros(nl)

    beta = beta0.copy()
    r = y - X @ beta
    grad = -2.0 * (M.T @ r)
    lam_prev = lambdas[0]
    work = np.zeros(p, dtype=np.bool_)

    for li in range(nl):
        lam = lambdas[li]
        # coordinates within rounding of the threshold stay at zero, so the
        # path starts exactly at the origin at lambda_max
        thr = lam * (1.0 + 1e-12)
        # sequential strong rule; the KKT sweep below catches any miss
        thresh = 2.0 * lam - lam_prev if li > 0 else lam
        for k in range(p):
            work[k] = curv[k] > 0.0 and (beta[k] != 0.0 or abs(grad[k]) >= thresh)
        it = 0
        ok = False
        while True:
            idx = np.nonzero(work)[0]
            inner = 0
            next_newton = newton_every
            while it < max_iter:
                it += 1
                inner += 1
                maxch = 0.0
                for t in range(idx.shape[0]):
                    k = idx[t]
                    gk = 0.0
                    for i in range(n):
                        gk += M[i, k] * r[i]
                    z = curv[k] * beta[k] + 2.0 * gk
                    if z > thr:
                        bnew = (z - lam) / curv[k]
                    elif z < -thr:
                        bnew = (z + lam) / curv[k]
                    else:
                        bnew = 0.0
                    d = bnew - beta[k]
                    if d != 0.0:
                        for i in range(n):
                            r[i] -= X[i, k] * d
                        beta[k] = bnew
                        ch = curv[k] * abs(d)
                        if ch > maxch:
                            maxch = ch
                if maxch < tol:
                    break
                if newton_every > 0 and inner == next_newton:
                    # back off geometrically while the sign pattern is unsettled
                    next_newton *= 2
                    cand, good = _newton_step(X, M, y, beta, lam, curv)
                    if good:
                        rc = y - X @ cand
                        gc = -2.0 * (M.T @ rc)
                        if _kkt(gc, cand, lam, curv) <= tol:
                            beta[:] = cand
                            r[:] = rc
                            break
            grad = -2.0 * (M.T @ r)
            added = False
            for k in range(p):
                if not work[k] and curv[k] > 0.0 and abs(grad[k]) > lam:
                    work[k] = True
                    added = True
            kkt = _kkt(grad, beta, lam, curv)
            if not added and kkt <= tol:
                ok = True
                break
            if it >= max_iter:
                break
        betas[li] = beta
        iters[li] = it
        conv[li] = ok
        kkts[li] = _kkt(grad, beta, lam, curv)
        lam_prev = lam
    return betas, iters, conv, kkts


def _run_path(design: QuadraticDesign, lambdas, config: FitConfig, warm_start=None):
    lambdas = np.ascontiguousarray(lambdas, dtype=float)
    if warm_start is None:
        b0 = np.zeros(design.p)
    else:
        b0 = np.asarray(warm_start, float) * design.scale
    return _cd_path(design.X, design.M, design.y, design.curv, lambdas, b0,
                    float(config.tol), int(config.max_iter), NEWTON_EVERY)


def _make_result(design, beta_scaled, lam, h, it, conv, kkt, method) -> FitResult:
    beta = beta_scaled / design.scale
    objective = design.loss(beta_scaled) + lam * float(np.sum(np.abs(beta_scaled)))
    return FitResult(beta_hat=beta, lambda_used=float(lam), h_used=h,
                     active_set=np.flatnonzero(beta), n_iterations=int(it),
                     converged=bool(conv), objective=objective,
                     kkt_violation=float(kkt), method=method)


def lambda_grid(lam_max: float, config: FitConfig) -> np.ndarray:
    if config.n_lambda == 1:
        return np.array([lam_max])
    return lam_max * np.logspace(0.0, math.log10(config.lambda_min_ratio), config.n_lambda)


def solve_design(design: QuadraticDesign, lam: float, config: FitConfig | None = None,
                 warm_start=None, h=None, method="prd") -> FitResult:
    config = config or FitConfig()
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    betas, it, conv, kkt = _run_path(design, [lam], config, warm_start)
    return _make_result(design, betas[0], lam, h, it[0], conv[0], kkt[0], method)


def path_design(design: QuadraticDesign, config: FitConfig | None = None, h=None,
                method="prd", lambdas=None):
    config = config or FitConfig()
    if lambdas is None:
        lambdas = lambda_grid(design.lambda_max(), config)
    betas, it, conv, kkt = _run_path(design, lambdas, config)
    return [(float(lam), _make_result(design, betas[k], lam, h, it[k], conv[k], kkt[k], method))
            for k, lam in enumerate(lambdas)]


def solve(data: Dataset, pairs: PairSet, lam: float, config: FitConfig | None = None,
          warm_start=None) -> FitResult:
    """Minimize the pairwise loss plus ``lam * ||beta||_1``.

    Non-convergence within ``max_iter`` passes is reported through
    ``converged=False`` rather than raised.
    """
    require_pairs(pairs)
    config = config or FitConfig()
    design = pair_design(data, pairs, config.standardize)
    return solve_design(design, lam, config, warm_start, h=pairs.h)


def lambda_max(data: Dataset, pairs: PairSet) -> float:
    require_pairs(pairs)
    return pair_design(data, pairs).lambda_max()


def lambda_path(data: Dataset, pairs: PairSet, config: FitConfig | None = None):
    """Warm-started solutions on a log grid from ``lambda_max`` down."""
    require_pairs(pairs)
    config = config or FitConfig()
    design = pair_design(data, pairs, config.standardize)
    return path_design(design, config, h=pairs.h)


def cv_design(design: QuadraticDesign, folds, config: FitConfig, h=None, method="prd"):
    """K-fold CV over the full-data lambda grid.

    ``folds`` yields ``(L_train, weight_train, L_val, val_norm)``; the
    validation error of coefficients ``b`` is ``r' L_val r / val_norm``.
    The full-data path and the fold paths advance together in chunks of
    ``CV_CHUNK`` lambdas and stop once ``CV_PATIENCE`` consecutive lambdas
    bring no new minimum of the mean CV error. Returns
    ``(lambda*, FitResult, CVCurve)`` where the fit is the full-data path
    solution at ``lambda*``.
    """
    lambdas = lambda_grid(design.lambda_max(), config)
    scale = design.scale
    X = np.asarray(design.X * scale)
    y = design.y
    fits = [(QuadraticDesign(X, y, L_tr, w_tr, scale), L_val, norm)
            for L_tr, w_tr, L_val, norm in folds]
    nl = lambdas.shape[0]
    errs = np.zeros((len(fits), nl))
    full = []
    warm = [None] * len(fits)
    best, since, stop = np.inf, 0, nl
    for start in range(0, nl, CV_CHUNK):
        end = min(start + CV_CHUNK, nl)
        b0 = full[-1][0] / scale if full else None
        betas, it, conv, kkt = _run_path(design, lambdas[start:end], config, b0)
        for t in range(end - start):
            full.append((betas[t], it[t], conv[t], kkt[t]))
        for f, (d, L_val, norm) in enumerate(fits):
            fb, _, _, _ = _run_path(d, lambdas[start:end], config, warm[f])
            coef = fb / scale
            warm[f] = coef[-1]
            R = y[:, None] - X @ coef.T
            errs[f, start:end] = np.einsum("ij,ij->j", R, np.asarray(L_val @ R)) / norm
        for e in errs[:, start:end].mean(axis=0):
            if e < best - 1e-12:
                best, since = e, 0
            else:
                since += 1
        stop = end
        if since >= CV_PATIENCE:
            break
    errs = errs[:, :stop]
    curve = CVCurve(lambdas[:stop], errs.mean(axis=0),
                    errs.std(axis=0, ddof=1) / math.sqrt(errs.shape[0]), errs)
    k = pick_lambda(curve)
    b, it, conv, kkt = full[k]
    fit = _make_result(design, b, lambdas[k], h, it, conv, kkt, method)
    fit.extra["cv_index"] = k
    return float(lambdas[k]), fit, curve


@dataclass
class CVCurve:
    lambdas: np.ndarray
    mean_error: np.ndarray
    se_error: np.ndarray
    fold_errors: np.ndarray

    def rows(self):
        return list(zip(self.lambdas.tolist(), self.mean_error.tolist(),
                        self.se_error.tolist()))


def pick_lambda(curve: CVCurve) -> int:
    """Index of the CV minimizer; ties within 1e-12 go to the largest lambda."""
    best = np.min(curve.mean_error)
    return int(np.flatnonzero(curve.mean_error <= best + 1e-12)[0])


def _fold_ids(m: int, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    ids = np.empty(m, dtype=np.int64)
    ids[rng.permutation(m)] = np.arange(m) % folds
    return ids


def _pair_folds(pairs: PairSet, config: FitConfig):
    m = len(pairs)
    if m < config.cv_folds:
        raise InsufficientPairsError(
            f"insufficient pairs for folds: {m} active pairs for {config.cv_folds} folds")
    total = float(np.sum(pairs.weight))
    ids = _fold_ids(m, config.cv_folds, config.cv_seed)
    for f in range(config.cv_folds):
        tr, va = ids != f, ids == f
        w_tr = float(np.sum(pairs.weight[tr]))
        # rescale so the training loss sits on the full-data scale of lambda
        L_tr = pair_laplacian(pairs.i[tr], pairs.j[tr], pairs.weight[tr] * (total / w_tr), pairs.n)
        L_va = pair_laplacian(pairs.i[va], pairs.j[va], pairs.weight[va], pairs.n)
        yield L_tr, total, L_va, float(np.sum(pairs.weight[va]))


def _obs_pair_folds(pairs: PairSet, config: FitConfig):
    ids = _fold_ids(pairs.n, config.cv_folds, config.cv_seed)
    total = float(np.sum(pairs.weight))
    out = []
    for f in range(config.cv_folds):
        in_va = ids == f
        va = in_va[pairs.i] & in_va[pairs.j]
        tr = ~in_va[pairs.i] & ~in_va[pairs.j]
        w_tr, w_va = float(np.sum(pairs.weight[tr])), float(np.sum(pairs.weight[va]))
        if not tr.any() or not va.any():
            raise InsufficientPairsError(
                f"insufficient pairs for folds: fold {f} has {int(tr.sum())} training "
                f"and {int(va.sum())} validation pairs")
        L_tr = pair_laplacian(pairs.i[tr], pairs.j[tr], pairs.weight[tr] * (total / w_tr), pairs.n)
        L_va = pair_laplacian(pairs.i[va], pairs.j[va], pairs.weight[va], pairs.n)
        out.append((L_tr, total, L_va, w_va))
    return out


def row_folds(n: int, config: FitConfig):
    """Observation folds for row-weighted designs (the baselines)."""
    if n < config.cv_folds:
        raise InsufficientPairsError(f"{n} observations for {config.cv_folds} folds")
    ids = _fold_ids(n, config.cv_folds, config.cv_seed)
    for f in range(config.cv_folds):
        tr = (ids != f).astype(float)
        yield sp.diags(tr / tr.sum()), 1.0, sp.diags(1.0 - tr), float(n - tr.sum())


def cv_select(data: Dataset, h: float, kernel: Kernel | str | None = None,
              config: FitConfig | None = None):
    """Choose lambda by K-fold CV; returns ``(lambda*, FitResult, CVCurve)``.

    ``config.cv_policy == "pair"`` partitions the active pairs into folds;
    ``"obs"`` partitions observations and keeps only pairs inside one side.
    """
    config = config or FitConfig()
    pairs = build_pairs(data, h, get_kernel(kernel))
    require_pairs(pairs)
    design = pair_design(data, pairs, config.standardize)
    if config.cv_policy == "pair":
        folds = list(_pair_folds(pairs, config))
    else:
        folds = _obs_pair_folds(pairs, config)
    return cv_design(design, folds, config, h=pairs.h)


def fit_prd(data: Dataset, config: FitConfig | None = None,
            kernel: Kernel | str | None = None) -> FitResult:
    """Pairwise-difference lasso with ``config.h`` (or "auto") and ``config.lam``.

    ``lam`` is a number, or "cv" for cross-validation.
    """
    config = config or FitConfig()
    h = resolve_bandwidth(config.h, data.n, data.p)
    if config.lam == "cv":
        _, fit, curve = cv_select(data, h, kernel, config)
        fit.extra["cv_curve"] = curve
        return fit
    pairs = build_pairs(data, h, get_kernel(kernel))
    return solve(data, pairs, float(config.lam), config)
