import numpy as np
import pytest

from magloc import _pykernels
from magloc.field_model import MagnetPose, MagnetSpec
from magloc.sensor_array import paper_layouts

try:
    from magloc import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = [pytest.param(_pykernels, id="python")]
if _ckernels is not None:
    BACKENDS.append(pytest.param(_ckernels, id="cython"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def spec():
    return MagnetSpec()


@pytest.fixture
def array20():
    return paper_layouts(5, "four_by_m")


def random_pose(rng, lateral=(0.06, 0.045), heights=(0.03, 0.2)):
    pos = np.array([
        rng.uniform(-lateral[0], lateral[0]),
        rng.uniform(-lateral[1], lateral[1]),
        rng.uniform(*heights),
    ])
    h = rng.standard_normal(3)
    return MagnetPose(pos, h / np.linalg.norm(h))


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
