import numpy as np
import pytest

from dpdco import _kernels_py
from dpdco.descent import oracle_optimum
from dpdco.evcharging import EVObjective
from dpdco.model import ScenarioConfig, build_scenario

try:
    from dpdco import _kernels
except ImportError:  # extension not built
    _kernels = None

KERNELS = [_kernels_py] + ([_kernels] if _kernels is not None else [])


@pytest.fixture(params=KERNELS, ids=lambda m: m.BACKEND)
def kernel(request):
    return request.param


@pytest.fixture(scope="session")
def desk():
    sc = build_scenario(ScenarioConfig())
    obj = EVObjective.for_scenario(sc)
    return sc, obj, oracle_optimum(sc, obj)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
