import sys

import numpy as np
import pytest
from hypothesis import settings

from tubedispatch import ControllerConfig, Plant, UncertaintyConfig, generate_scenario, synth_year

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def plant():
    return Plant()


@pytest.fixture(scope="session")
def cfg():
    return ControllerConfig()


@pytest.fixture(scope="session")
def year():
    return synth_year(0)


@pytest.fixture(scope="session")
def noisy_day(year):
    return generate_scenario(year[40], UncertaintyConfig(seed=3), 40)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "ACCEPTANCE", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
