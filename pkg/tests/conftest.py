import numpy as np
import pytest

from fi2vts.network import RunConfig
from fi2vts.spectral import WindowSpec


def small_config(**overrides) -> RunConfig:
    """A few-hundred-parameter model that still exercises every stage."""
    base = dict(D=2, L=48, T=8, E=4, N=2, M=4, H=2, d_k=3, d_v=3, d_hidden=5,
                windows=[WindowSpec(16), WindowSpec(8)], kernel_sizes=(1, 3), batch=8,
                epochs=2, seed=0)
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture
def cfg():
    return small_config()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per criterion; echoed now and in the summary."""
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
