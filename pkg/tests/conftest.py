import sys

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("kcfield", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("kcfield")


@pytest.fixture
def unit_line():
    from kcfield.grid import BoxDomain, make_lattice

    return lambda m: make_lattice(BoxDomain.unit(1), m)


def linear_field(lattice):
    from kcfield.samplers import GridField

    x = lattice.axis(0)
    return GridField(lattice, x, {(1,): np.ones_like(x)})


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
