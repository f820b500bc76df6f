import numpy as np
import pytest


def numerical_grad(f, x, eps=1e-5):
    """Central differences of scalar f() w.r.t. array x (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def assert_grad_close(analytic, numeric, abs_tol=1e-4, rel_tol=1e-3):
    err = np.abs(analytic - numeric)
    tol = np.maximum(abs_tol, rel_tol * np.maximum(np.abs(analytic), np.abs(numeric)))
    bad = err > tol
    assert not bad.any(), f"max err {err.max():.3g}; {bad.sum()} entries out of tolerance"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria record one line each; printed together after the run
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
