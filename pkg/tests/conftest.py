import numpy as np
import pytest

from clickremoval.backbone import ToyBackbone


@pytest.fixture(scope="session")
def toy():
    return ToyBackbone()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_row_stochastic(rng, n):
    a = rng.random((n, n)) + 1e-9
    return a / a.sum(axis=1, keepdims=True)


criterion_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in criterion_lines:
            terminalreporter.write_line(line)


def brute_force_distance(A, click, tau, n_max):
    """Literal propagation oracle: materialize every p_n, then scan the
    threshold rule independently of the implementation's bookkeeping."""
    n = A.shape[0]
    p = np.zeros(n)
    p[click] = 1.0
    powers = [p.copy()]
    for _ in range(n_max):
        p = p @ A
        powers.append(p.copy())
    d = np.full(n, n_max + 1, dtype=np.int64)
    for i in range(n):
        for step, pn in enumerate(powers):
            if pn[i] >= tau * pn.max():
                d[i] = step
                break
    return d
