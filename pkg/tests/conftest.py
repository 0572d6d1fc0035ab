import warnings

import numpy as np
import pytest

from migopen import estimator, simlab
from migopen.errors import CollinearRegressorWarning


@pytest.fixture(autouse=True)
def _quiet_collinear_warnings():
    # Tiny synthetic worlds routinely draw all-zero dummy columns; the drop
    # warning is expected noise for most tests.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CollinearRegressorWarning)
        yield


@pytest.fixture(scope="session")
def world_10x2():
    params = simlab.WorldParams(n_countries=10, years=(2000, 2010), seed=3)
    return simlab.generate_world(params)


@pytest.fixture(scope="session")
def fit_10x2(world_10x2):
    panel, _ = world_10x2
    return estimator.fit_ppml(panel)


def assert_focs(fit, panel, tol_factor: float = 1e-6):
    """Regressor and FE-group score sums vanish relative to the fitted total."""
    foc = estimator.first_order_conditions(fit, panel)
    tol = tol_factor * max(foc["mu_total"], 1.0)
    for name, val in foc["regressor"].items():
        assert val < tol, f"regressor FOC violated for {name}: {val} >= {tol}"
    for dim, val in foc["fe_groups"].items():
        assert val < tol, f"FE-group FOC violated for {dim}: {val} >= {tol}"


def max_relative_gap(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))
