import numpy as np
import pytest

from phasecut.phaseshift import wrap
from surfaces import gentle_surface

# filled by test_acceptance.py, printed at the end of the run
_ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def acceptance():
    return _ACCEPTANCE


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def smooth():
    truth = gentle_surface()
    return truth, truth.with_values(wrap(truth.values))
