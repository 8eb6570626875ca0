import sys

import numpy as np
import pytest

from updscope.swin import SwinClassifier, SwinConfig, SwinWeights

# small enough for fast tests: 64x64 input gives stage grids 16, 8, 4, 2
TINY = SwinConfig(embed_dim=8, depths=(2, 2, 2, 2), num_heads=(1, 2, 2, 4), window_size=2, seed=3)


@pytest.fixture(scope="session")
def tiny_weights():
    return SwinWeights.initialize(TINY)


@pytest.fixture(scope="session")
def tiny_model(tiny_weights):
    return SwinClassifier(tiny_weights)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
