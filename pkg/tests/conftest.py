import numpy as np
import pytest

from frmofdm.channel import rayleigh_realization
from frmofdm.frm import random_phases


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small(rng):
    """M=2, K=4, N=4 Rayleigh instance with random phases."""
    ch = rayleigh_realization(2, 4, 4, rng)
    return ch, random_phases(4, rng)


def crandn(rng, size):
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2)


_GATE_LINES = {}


@pytest.fixture
def gate(capsys):
    """Record one PASS/FAIL line per acceptance criterion; also assert it."""
    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} -- {detail}"
        _GATE_LINES[number] = line
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _GATE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_GATE_LINES):
            terminalreporter.write_line(_GATE_LINES[number])
