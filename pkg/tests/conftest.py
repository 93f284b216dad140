import sys

import numpy as np
import pytest

from contda.netcore import Model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_model():
    return Model.build(2, 3, hidden=(8, 8), d_f=4, rng=np.random.default_rng(7))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.OUTCOMES):
        terminalreporter.write_line(mod.OUTCOMES[n].line())
