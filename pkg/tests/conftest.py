import numpy as np
import pytest

from btinfer import LtiSystem, spin_up_prior

from oracles import random_spd, random_stable

# Acceptance lines collected during the session, printed in the terminal summary.
ACCEPTANCE = []


def make_system(d, k=2, m=None, seed=0, margin=0.1, nonnormal=1.0):
    rng = np.random.default_rng(seed)
    A = random_stable(d, rng, margin, nonnormal)
    C = rng.standard_normal((k, d))
    B = rng.standard_normal((d, m if m is not None else d))
    noise = random_spd(k, rng, cond=3.0) * 0.1
    return LtiSystem(A, C, noise, B)


def make_problem(d, k=2, m=None, seed=0, **kw):
    sys = make_system(d, k, m, seed, **kw)
    return sys, spin_up_prior(sys.A, sys.B)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_problem():
    return make_problem(6, k=2, seed=3)


@pytest.fixture
def acceptance():
    """Record one pass/fail line per criterion; the assertion stays in the test."""

    def record(criterion, ok, detail, status=None):
        line = f"[{status or ('PASS' if ok else 'FAIL')}] {criterion}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
