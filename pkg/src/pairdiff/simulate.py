"""Synthetic partially linear data for the five benchmark scenarios.

All scenarios draw ``W ~ Unif[-0.5, 0.5]`` and ``X ~ N(0, Sigma)``
independently of ``W``, with noise independent of both:

=========  ==========================  ======================  =========
scenario   g(w)                        Sigma                   noise
=========  ==========================  ======================  =========
1          2(exp(2w) + sin(10w))       identity                N(0, 1)
2          same, minus 6 for w <= 0    identity                N(0, 1)
3          10 * cbrt(w)                identity                N(0, 1)
4          as scenario 2               0.3^|i-j|               N(0, 1)
5          as scenario 1               identity                t(3)
=========  ==========================  ======================  =========

Randomness comes from numpy's PCG64 seeded through ``SeedSequence``: a
spec's seed spawns one independent child stream each for W, X and the
noise, so a dataset depends on nothing but its spec.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset

SCENARIOS = (1, 2, 3, 4, 5)
AR_RHO = 0.3


@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: int
    n: int
    p: int
    s: int
    seed: int = 0

    def __post_init__(self):
        if self.scenario_id not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario_id}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.p < 1 or not 0 <= self.s <= self.p:
            raise ValueError(f"need 0 <= s <= p, got s={self.s}, p={self.p}")

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return ScenarioSpec(self.scenario_id, self.n, self.p, self.s, int(seed))


def true_beta(p: int, s: int) -> np.ndarray:
    """First ``s`` entries run arithmetically from 5 down to 0.1, the rest are 0.

    ``s = 0`` gives the zero vector.
    """
    if s > p or s < 0:
        raise ValueError(f"need 0 <= s <= p, got s={s}, p={p}")
    beta = np.zeros(p)
    if s == 1:
        beta[0] = 5.0
    elif s > 1:
        beta[:s] = np.linspace(5.0, 0.1, s)
    return beta


def g_eval(scenario_id: int, w):
    w = np.asarray(w, dtype=float)
    if scenario_id in (1, 5):
        out = 2.0 * (np.exp(2.0 * w) + np.sin(10.0 * w))
    elif scenario_id in (2, 4):
        out = 2.0 * (np.exp(2.0 * w) + np.sin(10.0 * w)) - np.where(w <= 0, 6.0, 0.0)
    elif scenario_id == 3:
        out = 10.0 * np.cbrt(w)
    else:
        raise ValueError(f"scenario must be one of {SCENARIOS}, got {scenario_id}")
    return out if out.ndim else float(out)


def _ar1_normals(rng: np.random.Generator, n: int, p: int, rho: float) -> np.ndarray:
    z = rng.standard_normal((n, p))
    X = np.empty_like(z)
    X[:, 0] = z[:, 0]
    c = np.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + c * z[:, j]
    return X


def generate(spec: ScenarioSpec) -> Dataset:
    rng_w, rng_x, rng_u = (np.random.Generator(np.random.PCG64(s))
                           for s in np.random.SeedSequence(spec.seed).spawn(3))
    W = rng_w.uniform(-0.5, 0.5, spec.n)
    if spec.scenario_id == 4:
        X = _ar1_normals(rng_x, spec.n, spec.p, AR_RHO)
    else:
        X = rng_x.standard_normal((spec.n, spec.p))
    if spec.scenario_id == 5:
        u = rng_u.standard_t(3, spec.n)
    else:
        u = rng_u.standard_normal(spec.n)
    beta = true_beta(spec.p, spec.s)
    g = g_eval(spec.scenario_id, W)
    Y = X @ beta + g + u
    return Dataset(X, Y, W, beta_star=beta, g_values=g)
