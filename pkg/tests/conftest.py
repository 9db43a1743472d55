import sys

import numpy as np
import pytest

from scdepth.geometry import Intrinsics


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_K(W=8, H=6, f=None):
    f = f or 0.9 * W
    return Intrinsics(fx=f, fy=f, cx=(W - 1) / 2, cy=(H - 1) / 2, width=W, height=H)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
