import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from piezoflow import fields as F

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=[2, 3], ids=["2d", "3d"])
def grid(request):
    return F.Grid(16 if request.param == 3 else 32, d=request.param)


@pytest.fixture
def grid3():
    return F.Grid(16, d=3)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
