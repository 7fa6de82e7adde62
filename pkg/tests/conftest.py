import numpy as np
import pytest

from tucrl import Mdp


def random_mdp(rng, S, A, density=0.6, n_actions=None, r_max=1.0):
    """Dense-ish random MDP used by the oracle comparisons."""
    P = rng.random((S, A, S)) * (rng.random((S, A, S)) < density)
    for s in range(S):
        for a in range(A):
            if P[s, a].sum() == 0:
                P[s, a, rng.integers(S)] = 1.0
    P /= P.sum(axis=-1, keepdims=True)
    R = rng.random((S, A)) * r_max
    n_actions = np.full(S, A) if n_actions is None else n_actions
    return Mdp(P, R, n_actions, r_max=r_max)


def cycle_mdp(rewards=(0.0, 1.0)):
    """Deterministic 2-cycle with one action per state."""
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1.0
    return Mdp(P, np.array(rewards, dtype=float)[:, None], [1, 1])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    """Store and print the outcome line of one acceptance criterion."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
