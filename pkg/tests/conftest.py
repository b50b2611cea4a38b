import numpy as np
import pytest

from attn_newton.oracles import random_instance, random_state


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_case(rng):
    inst = random_instance(rng, 6, 3, 1.0)
    p = random_state(rng, 3, 1.0)
    return inst, p


_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line; the lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(label: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  {label}: {detail}"
        print(line)
        lines.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
