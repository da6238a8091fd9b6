import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from rvrec import dataset as D
from rvrec.synthetic import synthetic_ratings

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def toy_ratings():
    return synthetic_ratings(n_users=60, n_items=50, ratings_per_user=(12, 30), seed=3)


@pytest.fixture(scope="session")
def toy_dataset(toy_ratings):
    return D.prepare(toy_ratings, 3.5, 5)


@pytest.fixture(scope="session")
def toy_split(toy_dataset):
    return D.split(toy_dataset, D.LEAVE_ONE_OUT, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria; each prints a PASS/FAIL line")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
