import sys

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_psd(rng, d, rank=None):
    rank = d if rank is None else rank
    A = rng.standard_normal((d, rank))
    return A @ A.T


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    order = sorted(results, key=lambda k: int(k.split("-")[1]))
    for key in order:
        terminalreporter.write_line(results[key])
