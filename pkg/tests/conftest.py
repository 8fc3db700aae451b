import itertools

import numpy as np
import pytest


def all_sign_vectors(n):
    """Every vector in {-1, +1}^n as rows of a (2^n, n) array."""
    return np.array(list(itertools.product((-1.0, 1.0), repeat=n)))


def random_symmetric(rng, n, low=-1.0, high=1.0):
    a = rng.uniform(low, high, size=(n, n))
    return 0.5 * (a + a.T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def record(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
