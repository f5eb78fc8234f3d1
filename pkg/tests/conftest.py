import numpy as np
import pytest

from hypo import kernels
from hypo.datagen import build_world

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split("-")[1])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    return kernels.get_backend(request.param)


@pytest.fixture
def small_world():
    return build_world(6, 5, 1.0, seed=11)
