import numpy as np
import pytest

from gradbalance.graph import Graph
from gradbalance.objectives import make_table

# node labels A..E of the hand-worked single round
GOLDEN_EDGES = [(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)]
GOLDEN_X = [4.0, 6.0, 5.0, 4.0, 2.0]
GOLDEN_SLOPES = [9.0, 9.0, 6.0, 3.0, 1.0]


@pytest.fixture
def golden():
    return Graph.from_edges(5, GOLDEN_EDGES), make_table(GOLDEN_SLOPES, 0.5), np.array(GOLDEN_X)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(label: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {label}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
