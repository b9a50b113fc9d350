import sys
import warnings
from functools import lru_cache
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from driftwatch.bounds import GridSpec, build_table  # noqa: E402

SMALL_ALPHAS = (0.001, 0.01)


@lru_cache(maxsize=None)
def small_table(eta: float):
    """Coarse table for decay values the shipped table does not cover."""
    grid = GridSpec(
        p_axis=tuple(i / 10 for i in range(11)),
        n_axis=(1, 2, 4, 8, 16, 32, 64, 128, 256, 512),
        alphas=SMALL_ALPHAS,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return build_table(grid, eta=eta, mc_samples=10_000, seed=11)


@pytest.fixture
def table_for_eta():
    return small_table


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
