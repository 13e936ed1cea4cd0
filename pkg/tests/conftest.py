import numpy as np
import pytest
from hypothesis import settings

from dislotension.elasticity import make_cubic, make_isotropic

# derandomized property tests: the seed is fixed by the example database-free profile
settings.register_profile("repro", derandomize=True, deadline=None, print_blob=True)
settings.load_profile("repro")


@pytest.fixture(scope="session")
def iso():
    return make_isotropic(1.0, 1.0)


@pytest.fixture(scope="session")
def cubic():
    return make_cubic(3.0, 2.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


# one verdict line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


@pytest.fixture
def verdict(request):
    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
