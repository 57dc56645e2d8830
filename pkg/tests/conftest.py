import numpy as np
import pytest

from econdeepc import config as cfgmod
from econdeepc.learn import CostHead, LiftingModel, Scaling, TransformNet
from econdeepc.plant import InputBounds, LtiPlant, random_lti
from econdeepc.trajkit import Trajectory


@pytest.fixture(scope="session")
def default_cfg():
    return cfgmod.load()


@pytest.fixture(scope="session")
def cstr_params(default_cfg):
    return default_cfg.plant.params


def lti_setup(seed=1, n_x=3, n_u=2, n_y=2, T=200, feedthrough=False):
    """Random controllable LTI plant with a noiseless uniform-excitation record."""
    rng = np.random.default_rng(seed)
    sys = random_lti(rng, n_x=n_x, n_u=n_u, n_y=n_y, feedthrough=feedthrough)
    bounds = InputBounds(tuple([-1.0] * n_u), tuple([1.0] * n_u))
    plant = LtiPlant(sys, bounds)
    u = rng.uniform(-1, 1, (T, n_u))
    y = np.array([plant.step(v) for v in u])
    return sys, plant, Trajectory(u, y, np.zeros(T), 1.0)


def identity_model(n_y, q=None, P=None, b=0.0, mode="cost"):
    """Lift ``z = y`` with a given quadratic head and identity scaling."""
    q = np.zeros(n_y) if q is None else q
    P = np.zeros(n_y) if P is None else P
    return LiftingModel(TransformNet.linear(np.eye(n_y)), CostHead(q, P, b, mode), np.eye(n_y),
                        Scaling.identity(n_y, n_y), tuple(range(n_y)))


@pytest.fixture
def lti():
    return lti_setup()


# --- acceptance report ---------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, name: str, ok: bool, detail: str) -> None:
    """Store (and print) the pass/fail line of one acceptance criterion."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} ({name}): {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
