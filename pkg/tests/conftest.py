import numpy as np
import pytest

from slipflow.geometry import ChannelProfile, TruncatedDomain

BUMP = "1+0.5*exp(-x^2)"


@pytest.fixture(scope="session")
def straight():
    return ChannelProfile.from_expressions("-1", "1")


@pytest.fixture(scope="session")
def bump():
    return ChannelProfile.symmetric(BUMP)


@pytest.fixture(scope="session")
def quarter():
    return ChannelProfile.symmetric("0.5*(1+x^2)^0.25")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def domain(profile, a, b):
    return TruncatedDomain(profile, a, b)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
