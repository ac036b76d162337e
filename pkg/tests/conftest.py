from __future__ import annotations

import numpy as np
import pytest

from pairdiff.core import Dataset


def random_dataset(rng, n, p, w_scale=1.0, truth=False):
    X = rng.standard_normal((n, p))
    W = rng.uniform(-0.5, 0.5, n) * w_scale
    beta = rng.standard_normal(p)
    g = np.sin(6 * W)
    Y = X @ beta + g + rng.standard_normal(n)
    if truth:
        return Dataset(X, Y, W, beta_star=beta, g_values=g)
    return Dataset(X, Y, W)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def two_point():
    # single active pair: W = (0, 0.1), Y = (1, 0), X = (1, 0)
    return Dataset(np.array([[1.0], [0.0]]), np.array([1.0, 0.0]), np.array([0.0, 0.1]))


# acceptance outcomes, printed as one line each at the end of the run
ACCEPTANCE: dict = {}
SUPPLEMENT: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE and not SUPPLEMENT:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        tr.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    if SUPPLEMENT:
        tr.section("supplementary (not criteria)")
        for line in SUPPLEMENT:
            tr.write_line(line)
