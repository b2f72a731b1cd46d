"""Shared test helpers: central finite-difference gradient oracle.

The oracle re-evaluates the function at x +- h component by component, so it
is independent of the backward pass it checks. Gradient checks run with the
tensor core in float64 mode; at h=1e-3 the float32 rounding noise in the
difference quotient would exceed the 1e-5 absolute floor.
"""

import numpy as np
import pytest

# One line per acceptance criterion, filled in by tests/test_acceptance.py
# and echoed in the terminal summary so a plain `pytest -v` run shows the
# per-criterion verdicts in one block.
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central differences of scalar-valued f() w.r.t. array x, in place.

    f must read the *same* array object x on every call.
    """
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def assert_grads_close(analytic, numeric, rel: float = 1e-3, abs_floor: float = 1e-5):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    err = np.abs(analytic - numeric)
    tol = np.maximum(abs_floor, rel * np.maximum(np.abs(analytic), np.abs(numeric)))
    worst = np.max(err - tol)
    assert np.all(err <= tol), (
        f"gradient mismatch: worst excess {worst:.3e}, "
        f"max abs err {err.max():.3e}, analytic range "
        f"[{analytic.min():.3e}, {analytic.max():.3e}]"
    )


@pytest.fixture
def rng64():
    """Plain numpy generator for shaping random test data (not the product RNG)."""
    return np.random.default_rng(1234)
