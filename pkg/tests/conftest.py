import numpy as np
import pytest

from darcnet import tensor as T


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def numeric_grad(f, arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def analytic_grads(build_loss, leaves):
    """Run ``build_loss()`` on a fresh tape and return gradients for ``leaves``."""
    for t in leaves:
        t.grad = None
    with T.Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    return [t.grad.copy() for t in leaves]


def check_grads(build_loss, leaves, eps: float = 1e-6):
    """Largest relative error between tape gradients and finite differences."""
    grads = analytic_grads(build_loss, leaves)
    worst = 0.0
    for t, g in zip(leaves, grads):
        num = numeric_grad(lambda: float(build_loss().data), t.data, eps)
        worst = max(worst, rel_err(g, num))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _float64_default():
    prev = T.get_default_dtype()
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(prev)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, recorded by tests via ``record_property``."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            for key, value in rep.user_properties:
                if key == "acceptance":
                    lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
