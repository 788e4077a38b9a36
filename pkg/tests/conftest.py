import numpy as np
import pytest

from sll.numerics import central_difference, make_rng, max_relative_error


def fd_error(loss, arrays, analytic):
    """Normwise relative error between the analytic gradient of ``loss()`` and
    central differences, taken over all blocks in ``arrays`` jointly (each is
    perturbed in place)."""
    num = [central_difference(loss, arr).ravel() for arr in arrays]
    ana = [np.asarray(g, dtype=float).ravel() for g in analytic]
    return max_relative_error(np.concatenate(ana), np.concatenate(num))


@pytest.fixture
def rng():
    return make_rng(1234)


ACCEPTANCE_LINES = []


def record_criterion(label, description, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {label}: {description} -- {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
