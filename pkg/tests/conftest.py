import numpy as np
import pytest

from images import synthetic_rgb


GATE = pytest.StashKey[list]()


@pytest.fixture
def gate(request):
    """Record one acceptance line; all lines are echoed in the terminal
    summary whatever the outcome of the test that produced them."""
    lines = request.config.stash.setdefault(GATE, [])

    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} -- {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(GATE, [])
    if not lines:
        return
    terminalreporter.section("acceptance gate")
    for _, line in sorted(lines, key=lambda t: t[0]):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def hr128():
    return synthetic_rgb(128)


def finite_difference(fn, arr, eps=1e-6):
    """Central-difference gradient of scalar ``fn()`` w.r.t. every element of
    ``arr`` (modified in place and restored)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn()
        flat[i] = orig - eps
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad
