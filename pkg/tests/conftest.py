import numpy as np
import pytest
from hypothesis import settings

from tdbounds import problems

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def const_chain():
    return problems.const_chain()


@pytest.fixture(scope="session")
def noisy_chain():
    return problems.noisy_chain()


@pytest.fixture(scope="session")
def counterexample():
    return problems.counterexample()


@pytest.fixture(scope="session")
def random_5x3():
    return problems.random_mdp(5, 3, seed=11)


@pytest.fixture(scope="session")
def random_3state():
    return [problems.random_mdp(3, d, seed=s) for s, d in ((1, 1), (2, 2), (3, 3))]


def char_poly_roots(m):
    """Eigenvalue oracle: roots of det(x I - m) built from traces (d <= 3)."""
    m = np.asarray(m, dtype=float)
    d = m.shape[0]
    if d == 1:
        return np.array([m[0, 0]])
    tr = np.trace(m)
    if d == 2:
        coeffs = [1.0, -tr, np.linalg.det(m)]
    else:
        c2 = 0.5 * (tr ** 2 - np.trace(m @ m))
        coeffs = [1.0, -tr, c2, -np.linalg.det(m)]
    return np.roots(coeffs)


def rk4_columns(m, t, h=1e-4):
    """exp(m t) by classical Runge-Kutta on x' = m x from each unit vector."""
    m = np.asarray(m, dtype=float)
    x = np.eye(m.shape[0])
    steps = int(round(t / h))
    h = t / steps
    for _ in range(steps):
        k1 = m @ x
        k2 = m @ (x + 0.5 * h * k1)
        k3 = m @ (x + 0.5 * h * k2)
        k4 = m @ (x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


DOMINANCE_FRACTION = 0.25


@pytest.fixture(scope="session")
def dominance_systems():
    """const-chain plus three random 3-state MDPs whose stepsize threshold
    stays under the cap for every sigma in {0.25, 0.5, 0.75}."""
    out = [("const-chain", problems.const_chain().system)]
    for seed, d in ((3, 1), (4, 1), (1, 2)):
        out.append((f"random-{seed}-d{d}", problems.random_mdp(3, d, seed=seed, gamma=0.5).system))
    return out


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, passed, detail)``; lines are printed in the summary."""
    store = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(criterion, passed, detail):
        store.append((criterion, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(lines, key=lambda x: x[0]):
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
