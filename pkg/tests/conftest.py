import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from leakbench.dataset import SynthConfig, generate_synthetic  # noqa: E402


@pytest.fixture(scope="session")
def small_video():
    return generate_synthetic(SynthConfig(n_groups=40, items_per_group=10, seed=7))


@pytest.fixture(scope="session")
def default_video():
    return generate_synthetic(SynthConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# (criterion, passed, detail, seconds), filled by test_acceptance.py
ACCEPTANCE_LINES: list[tuple[str, bool, str, float]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail, seconds in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  [{seconds:.1f} s]  {detail}")
