import numpy as np
import pytest

from rdpc.system import LtiSystem, batch_reactor, collect, uniform_excitation


def random_system(rng, n=3, m=1, p=1, radius=1.2):
    a = rng.standard_normal((n, n))
    a *= radius / np.max(np.abs(np.linalg.eigvals(a)))
    return LtiSystem(a, rng.standard_normal((n, m)), rng.standard_normal((p, n)), np.zeros((p, m)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def reactor():
    return batch_reactor()


@pytest.fixture(scope="session")
def reactor_traj(reactor):
    u = uniform_excitation(18, 2, seed=7)
    return collect(reactor, np.zeros(4), u)


# -- acceptance summary ----------------------------------------------------
# Acceptance tests record one verdict per criterion here; the terminal summary
# prints one pass/fail line for each, whatever the capture settings.
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")
