import os
from pathlib import Path

import numpy as np
import pytest

from flea.tabular import DATA_DIR_ENV, Column, Dataset, FeatureSchema, resolve_path

DATA_DIR = Path(__file__).resolve().parents[1] / "data"
os.environ.setdefault(DATA_DIR_ENV, str(DATA_DIR))


def data_available(dataset_id: str) -> bool:
    return resolve_path(dataset_id).exists()


def needs_data(dataset_id: str):
    return pytest.mark.skipif(not data_available(dataset_id),
                              reason=f"{dataset_id} CSV not present in {DATA_DIR}")


TOY_SCHEMA = FeatureSchema(
    "toy",
    (Column("x0", "numeric"), Column("x1", "numeric"), Column("x2", "numeric")),
    protected="a",
    target="y",
)


def make_toy(n=300, seed=0, a_shift=1.0, flip=0.1) -> Dataset:
    """Three numeric features plus the protected attribute as the last column."""
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, n)
    X = rng.normal(size=(n, 3))
    X[:, 0] += a_shift * a
    y = (X[:, 0] + 0.5 * X[:, 1] + rng.normal(0, 0.5, n) > 0.5).astype(int)
    noise = rng.random(n) < flip
    y[noise] = 1 - y[noise]
    return Dataset(np.hstack([X, a[:, None]]), y, a, TOY_SCHEMA)


def make_1d(x, y, a) -> Dataset:
    return Dataset(np.asarray(x, float)[:, None], y, a, None)


@pytest.fixture
def toy():
    return make_toy()


def rel_error(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def finite_difference(fun, x, h=1e-6):
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e)[0] - fun(x - e)[0]) / (2 * h)
    return g


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
