import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from lfgeom import ZOO_NAMES, zoo_model  # noqa: E402

settings.register_profile("desk", deadline=None, max_examples=25, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("desk")

QUADRATIC = ("minkowski", "de_sitter", "product_hyperbolic", "product_sphere")
BERWALD = ("minkowski", "de_sitter", "product_hyperbolic", "product_sphere", "flat_finsler")


@pytest.fixture(scope="session")
def zoo():
    return {n: zoo_model(n) for n in ZOO_NAMES}


def cone_samples(model, rng, count, frac=0.8):
    """Random chart points and in-cone directions of both time orientations."""
    from lfgeom.models import _random_cone_directions
    X = model.sample_points(rng, count, margin=0.0)
    c = 0.5 * (model.chart_min + model.chart_max)
    X = c + frac * (X - c)
    V = _random_cone_directions(model, rng, count) * rng.uniform(0.2, 3.0, size=(count, 1))
    return X, V


def timelike_samples(model, rng, count, frac=0.8):
    """Chart points with future timelike vectors built from the orthonormal frame."""
    from lfgeom.fundamental import orthonormal_frame
    n = model.dim
    c = 0.5 * (model.chart_min + model.chart_max)
    hw = 0.5 * (model.chart_max - model.chart_min)
    X = c + frac * hw * rng.uniform(-1, 1, size=(count, n))
    out = []
    for x in X:
        E = orthonormal_frame(model, x)
        u = rng.normal(size=n - 1)
        u *= rng.uniform(0, 0.45) / np.linalg.norm(u)
        out.append(E @ np.concatenate([[1.0], u]) * rng.uniform(0.5, 2.0))
    return X, np.array(out)


# acceptance lines collected by tests/test_acceptance.py, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0].lstrip("#"))):
            terminalreporter.write_line(line)
