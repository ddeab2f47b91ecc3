import numpy as np
import pytest
from hypothesis import settings

from thermophase import model
from thermophase.mesh import build_uniform

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def params():
    return model.ModelParams()


@pytest.fixture
def mobility():
    return model.convergence_mobility()


@pytest.fixture(params=[2, 3, 4])
def mesh(request):
    return build_uniform(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one summary line per acceptance criterion."""

    def report(number, passed, detail):
        _ACCEPTANCE[number] = (passed, detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'}  {detail}")
