import numpy as np
import pytest

from sketchkf.statespace import GaussianBelief


def random_spd(rng, p, scale=1.0, jitter=0.1):
    A = rng.standard_normal((p, p))
    return scale * (A @ A.T / p + jitter * np.eye(p))


def random_belief(rng, p, scale=1.0):
    return GaussianBelief(rng.standard_normal(p), random_spd(rng, p, scale))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


#: one "criterion N: PASS|FAIL ..." line per acceptance criterion that ran
ACCEPTANCE_LINES: list = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
