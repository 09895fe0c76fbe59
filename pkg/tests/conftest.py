import numpy as np
import pytest

from stacked_mi.stacking import Dataset, ImputationSet

_ACCEPTANCE = []


@pytest.fixture
def record():
    """Record one acceptance line, then assert it."""

    def _record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} -- {detail}"
        _ACCEPTANCE.append((number, line))
        print(line)
        assert ok, line

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)


def make_imps(m=4, n=30, p=3, seed=0, names=None):
    rng = np.random.default_rng(seed)
    cube = rng.normal(size=(m, n, p))
    return ImputationSet.from_array(cube, names)


@pytest.fixture
def small_imps():
    return make_imps()


@pytest.fixture
def regression_imps():
    rng = np.random.default_rng(3)
    n, m = 60, 5
    base = rng.normal(size=(n, 3))
    y = 0.3 * base[:, 0] + rng.normal(size=n)
    sets = []
    for _ in range(m):
        x = base.copy()
        x[:15, 2] = rng.normal(size=15)  # imputed block differs across imputations
        sets.append(Dataset(np.column_stack([y, x]), ("y", "x1", "x2", "x3")))
    return ImputationSet(sets)
