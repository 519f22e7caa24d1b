import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


def random_pair_instance(rng, n=None, p=None, q=None):
    """Small random inputs for the pair-sum estimators."""
    n = int(rng.integers(6, 31)) if n is None else n
    p = int(rng.integers(1, 4)) if p is None else p
    q = int(rng.integers(1, 3)) if q is None else q
    Z = rng.normal(size=(n, q))
    Pt = rng.normal(size=(n, p)) + 0.8 * Z[:, :1]
    yt = Pt @ rng.normal(size=p) + rng.normal(size=n)
    ratio = 0.3 * rng.normal(size=(n, p))
    return Z, Pt, yt, ratio


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, ok: bool, detail: str) -> bool:
    """Log one acceptance criterion as a PASS/FAIL line (printed now and in the session summary)."""
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
