import numpy as np
import pytest

from priokit.factorization import prioritized_lq

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    def record(n, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def random_stack(rng, k=None, m=None, plant=True, near=True):
    """Random task blocks with planted rank deficiencies.

    Planted rows are exact copies, scaled copies plus a 1e-7 perturbation
    (only with ``near``) or zero rows.
    """
    k = k or int(rng.integers(1, 5))
    m = m or int(rng.integers(1, 7))
    dims = [int(rng.integers(1, 3)) for _ in range(k)]
    J = rng.standard_normal((sum(dims), m))
    if plant and J.shape[0] > 1:
        for _ in range(int(rng.integers(0, 3))):
            a, b = sorted(rng.choice(J.shape[0], 2, replace=False))
            kind = rng.integers(3)
            if kind == 0:
                J[b] = J[a]
            elif kind == 1:
                J[b] = rng.standard_normal() * J[a] + (1e-7 * rng.standard_normal(m) if near else 0.0)
            else:
                J[b] = 0.0
    return J, dims


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def conflict_D():
    return prioritized_lq(np.array([[1.0, 0.0], [1.0, 0.0]]), [1, 1])
