import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from adaptive_attribution.gallery import exogenous_coin, insufficiency_family
from adaptive_attribution.random_systems import random_case

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(params=[1.0, 2.0, -0.7])
def insufficiency(request):
    return insufficiency_family(request.param), request.param


@pytest.fixture
def coin():
    return exogenous_coin()


@pytest.fixture(params=range(6))
def case(request):
    return random_case(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    lines = [v for k, v in sorted((k, v) for k, v in getattr(mod, "RESULTS", {}).items() if isinstance(k, int))]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
