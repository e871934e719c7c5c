import math
import os

import pytest

from dynbridge import TransitionKernel, make_model
from dynbridge.transform import SpaceTransform

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SCENARIOS = os.path.join(ROOT, "scenarios")
HALF = {"kind": "constant", "value": math.sqrt(0.5)}
FAMILY_II = {"family": "sqrt_quadratic", "k1": 1.0, "k2": 1.0, "k3": 1.0}


@pytest.fixture(scope="session")
def gaussian():
    return make_model(HALF, 0.5, payoff={"kind": "identity"}, name="gaussian")


@pytest.fixture(scope="session")
def family_ii():
    return make_model(HALF, 0.5, a=FAMILY_II, payoff={"kind": "identity"}, name="family_ii")


@pytest.fixture(scope="session")
def ou_model():
    return make_model(HALF, 0.5, ou_k=1.0, name="ou")


@pytest.fixture(scope="session")
def static():
    return make_model({"kind": "zero"}, 1.0, payoff={"kind": "identity"}, name="static")


@pytest.fixture(scope="session")
def gaussian_kernel(gaussian):
    return TransitionKernel(gaussian)


@pytest.fixture(scope="session")
def family_ii_kernel(family_ii):
    return TransitionKernel(family_ii)


@pytest.fixture(scope="session")
def family_ii_tr(family_ii):
    return SpaceTransform(family_ii)


def scenario(name):
    return os.path.join(SCENARIOS, f"{name}.yaml")


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid:>4s} {'PASS' if ok else 'FAIL'}  {detail}")
