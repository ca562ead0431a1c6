import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from harris_regen.models import build_two_state_ctmc
from harris_regen.resolvent import resolvent_kernel
from harris_regen.splitting import compute_minorization
from harris_regen.streams import stream

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    """Fresh deterministic generator per test."""
    return stream(12345, 0, "tests")


@pytest.fixture(scope="session")
def sym():
    """Two-state chain a = b = 1 with full small set."""
    model = build_two_state_ctmc(1.0, 1.0)
    kernel = resolvent_kernel(model)
    return model, kernel, compute_minorization(kernel, (0, 1))


@pytest.fixture(scope="session")
def asym():
    """Two-state chain a = 1, b = 3 with full small set."""
    model = build_two_state_ctmc(1.0, 3.0)
    kernel = resolvent_kernel(model)
    return model, kernel, compute_minorization(kernel, (0, 1))



def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
