import numpy as np
import pytest

from synfer.summary import Dataset


def make_dataset(rng, n, p, kind="gaussian"):
    """Random full-rank dataset with intercept column and linear-ish outcome."""
    if kind == "uniform":
        covs = rng.uniform(-0.5, 0.5, size=(n, p - 1))
    else:
        covs = rng.standard_normal((n, p - 1))
    design = np.column_stack([np.ones(n), covs])
    coef = rng.standard_normal(p)
    outcome = design @ coef + rng.standard_normal(n)
    labels = ("intercept", *[f"x{j}" for j in range(1, p)], "y")
    return Dataset(design=design, outcome=outcome, labels=labels)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
