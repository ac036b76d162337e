"""Pairwise differences and the kernel-weighted pairwise loss.

For observations ``(Y_i, X_i, W_i)`` the loss at bandwidth ``h`` is

    L(beta) = C(n,2)^{-1} sum_{i<j} h^{-1} K((W_i - W_j)/h) (dY_ij - dX_ij' beta)^2

with ``dY_ij = Y_i - Y_j`` and ``dX_ij = X_i - X_j``. Only pairs with a
nonzero kernel weight are stored. Pairwise differences are never
materialized: with ``r = Y - X beta`` the loss equals ``r' L r`` where ``L``
is the weighted Laplacian of the pair graph, so every quantity here costs
``O(n p + #pairs)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DataError, NoActivePairsError
from .kernel import Kernel, eval_kernel, get_kernel


@dataclass(frozen=True, eq=False)
class Dataset:
    """Design ``X`` (n x p), response ``Y`` and scalar covariate ``W``.

    ``beta_star`` and ``g_values`` are the known truth, attached only by the
    simulator; they feed the diagnostics, never the estimators.
    """

    X: np.ndarray
    Y: np.ndarray
    W: np.ndarray
    beta_star: np.ndarray | None = None
    g_values: np.ndarray | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float).ravel()
        W = np.asarray(self.W, dtype=float).ravel()
        n = X.shape[0]
        if n < 2:
            raise DataError(f"need at least 2 observations, got {n}")
        if Y.shape[0] != n or W.shape[0] != n:
            raise DataError(f"length mismatch: X has {n} rows, Y has {Y.shape[0]}, "
                            f"W has {W.shape[0]}")
        for name, arr in (("X", X), ("Y", Y), ("W", W)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "W", W)
        if self.beta_star is not None:
            b = np.asarray(self.beta_star, dtype=float).ravel()
            if b.shape[0] != X.shape[1]:
                raise DataError(f"beta_star has length {b.shape[0]}, expected p = {X.shape[1]}")
            object.__setattr__(self, "beta_star", b)
        if self.g_values is not None:
            g = np.asarray(self.g_values, dtype=float).ravel()
            if g.shape[0] != n:
                raise DataError(f"g_values has length {g.shape[0]}, expected n = {n}")
            object.__setattr__(self, "g_values", g)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def noise(self) -> np.ndarray:
        """``u_i = Y_i - X_i' beta* - g(W_i)``; needs the attached truth."""
        if self.beta_star is None or self.g_values is None:
            raise DataError("noise needs beta_star and g_values (simulated data only)")
        return self.Y - self.X @ self.beta_star - self.g_values


@dataclass(frozen=True, eq=False)
class PairSet:
    """Kernel-active pairs ``i < j`` with their loss weights.

    Pairs are sorted lexicographically by ``(i, j)``.
    """

    i: np.ndarray
    j: np.ndarray
    weight: np.ndarray
    h: float
    n: int
    kernel: Kernel = field(default_factory=Kernel)

    def __len__(self):
        return self.i.shape[0]

    @property
    def pairs(self):
        return list(zip(self.i.tolist(), self.j.tolist(), self.weight.tolist()))

    def subset(self, mask) -> "PairSet":
        return PairSet(self.i[mask], self.j[mask], self.weight[mask], self.h, self.n,
                       self.kernel)

    def laplacian(self) -> sp.csr_matrix:
        """Weighted graph Laplacian ``L`` with ``r' L r = sum w (r_i - r_j)^2``."""
        return pair_laplacian(self.i, self.j, self.weight, self.n)


def pair_laplacian(i, j, weight, n) -> sp.csr_matrix:
    deg = np.bincount(i, weight, minlength=n) + np.bincount(j, weight, minlength=n)
    rows = np.concatenate([i, j, np.arange(n)])
    cols = np.concatenate([j, i, np.arange(n)])
    vals = np.concatenate([-weight, -weight, deg])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def kernel_pairs(W, h: float, kernel: Kernel | str | None = None):
    """Pairs ``i < j`` with ``K((W_i - W_j)/h) > 0`` and their kernel values.

    A sorted sweep over ``W``: cost is ``O(n log n + #candidates)`` where the
    candidates are pairs within ``h * support_radius`` of each other.
    """
    kernel = get_kernel(kernel)
    h = float(h)
    if not h > 0 or not np.isfinite(h):
        raise ValueError(f"bandwidth must be positive and finite, got {h}")
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    order = np.argsort(W, kind="stable")
    ws = W[order]
    # slack so that rounding in (W_i - W_j)/h never drops a boundary pair;
    # the exact kernel test below is authoritative
    radius = h * kernel.support_radius * (1 + 1e-9) + 1e-300
    hi = np.searchsorted(ws, ws + radius, side="right")
    counts = hi - np.arange(n) - 1
    a = np.repeat(np.arange(n), counts)
    offsets = np.arange(a.shape[0]) - np.repeat(np.cumsum(counts) - counts, counts)
    b = a + 1 + offsets

    oi, oj = order[a], order[b]
    i = np.minimum(oi, oj)
    j = np.maximum(oi, oj)
    kval = np.asarray(eval_kernel(kernel, (W[i] - W[j]) / h), dtype=float).reshape(-1)
    keep = kval > 0
    i, j, kval = i[keep], j[keep], kval[keep]
    idx = np.lexsort((j, i))
    return i[idx].astype(np.int64), j[idx].astype(np.int64), kval[idx]


def build_pairs(data: Dataset, h: float, kernel: Kernel | str | None = None) -> PairSet:
    """Kernel-active pairs of ``data`` weighted as in the pairwise loss."""
    kernel = get_kernel(kernel)
    n = data.n
    if n < 2:
        raise DataError("need at least 2 observations")
    i, j, kval = kernel_pairs(data.W, h, kernel)
    weight = kval / (float(h) * (n * (n - 1) / 2.0))
    return PairSet(i, j, weight, float(h), n, kernel)


def _check_beta(data: Dataset, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != data.p:
        raise DataError(f"beta has length {beta.shape[0]}, expected p = {data.p}")
    return beta


def _pair_residuals(data: Dataset, pairs: PairSet, beta) -> np.ndarray:
    r = data.Y - data.X @ beta
    return r[pairs.i] - r[pairs.j]


def _laplacian_apply(pairs: PairSet, v: np.ndarray) -> np.ndarray:
    s = pairs.weight * (v[pairs.i] - v[pairs.j])
    return (np.bincount(pairs.i, s, minlength=pairs.n)
            - np.bincount(pairs.j, s, minlength=pairs.n))


def loss(data: Dataset, pairs: PairSet, beta) -> float:
    """Kernel-weighted pairwise squared loss at ``beta``."""
    beta = _check_beta(data, beta)
    d = _pair_residuals(data, pairs, beta)
    return float(np.sum(pairs.weight * d * d))


def gradient(data: Dataset, pairs: PairSet, beta) -> np.ndarray:
    beta = _check_beta(data, beta)
    r = data.Y - data.X @ beta
    return -2.0 * (data.X.T @ _laplacian_apply(pairs, r))


def u_stat_g(data: Dataset, pairs: PairSet) -> np.ndarray:
    """``U_k = sum w (X_ik - X_jk)(g(W_i) - g(W_j))`` for every column k."""
    if data.g_values is None:
        raise DataError("u_stat_g needs g_values (simulated data only)")
    return data.X.T @ _laplacian_apply(pairs, data.g_values)


def u_stat_noise(data: Dataset, pairs: PairSet) -> np.ndarray:
    """``U_1k = sum w (X_ik - X_jk)(u_i - u_j)``; the noise part of the gradient at beta*."""
    return data.X.T @ _laplacian_apply(pairs, data.noise)


def require_pairs(pairs: PairSet) -> None:
    if len(pairs) == 0:
        raise NoActivePairsError()
