import math
import warnings

import numpy as np
import pytest

from purchase_timing.errors import NonDominantMatrix


@pytest.fixture(autouse=True)
def _quiet_dominance_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonDominantMatrix)
        yield


def american_put_tree(s0, K, r, sigma, T, n=5000):
    """Cox-Ross-Rubinstein tree for an American put without default."""
    dt = T / n
    u = math.exp(sigma * math.sqrt(dt))
    d = 1.0 / u
    p = (math.exp(r * dt) - d) / (u - d)
    disc = math.exp(-r * dt)
    j = np.arange(n + 1)
    v = np.maximum(K - s0 * u ** (n - j) * d ** j, 0.0)
    for i in range(n - 1, -1, -1):
        k = np.arange(i + 1)
        v = np.maximum(disc * (p * v[:-1] + (1 - p) * v[1:]), K - s0 * u ** (i - k) * d ** k)
    return float(v[0])


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (not k[0].isdigit(), k)):
        ok, text = ACCEPTANCE[key]
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {text}")
