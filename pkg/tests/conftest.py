import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from automan import data as D

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def mixed_dataset(n=40, seed=0, task="regression", d=6, lookback=8, n_levels=3):
    """Numerical, categorical and temporal columns in one table."""
    rng = np.random.default_rng(seed)
    cols = [D.Column(f"x{j + 1}", "numerical") for j in range(d)]
    cols += [D.Column("color", "categorical"), D.Column("sales", "temporal", lookback)]
    schema = D.Schema(tuple(cols), "y", task)
    X = rng.normal(size=(n, d))
    levels = np.array([f"c{i}" for i in range(n_levels)], dtype=object)
    raw = levels[rng.integers(0, n_levels, n)][:, None]
    tables = [D._first_appearance(raw[:, 0])]
    codes = D.encode_categories(raw, tables)
    W = rng.normal(size=(n, lookback))
    if task == "classification":
        y = (X[:, 0] + W[:, -1] > 0).astype(np.int64)
        classes = ["0", "1"]
    else:
        y = X[:, 1] * X[:, 2] + 0.5 * W[:, -3]
        classes = None
    return D.Dataset(schema, X, raw, codes, tables, [W], y, classes=classes)


@pytest.fixture
def mixed():
    return mixed_dataset()


@pytest.fixture
def tiny_regression():
    return D.split(D.synthesize("product+log", 120, 6, seed=3), seed=3)


# one line per acceptance criterion, echoed after the test summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
