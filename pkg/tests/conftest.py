import numpy as np
import pytest

from quasiergodic import BirthDeathSpec, FiniteAbsorbingChain, decay_parameter

# birth i+3, death (i+1)^2: decay parameter 2, closed-form eigenfunction 3i/(i+2)
CLOSED_FORM_BIRTH = "i+3"
CLOSED_FORM_DEATH = "(i+1)^2"


def closed_form_spec():
    return BirthDeathSpec.from_expressions(CLOSED_FORM_BIRTH, CLOSED_FORM_DEATH)


def polynomial_entrance_spec(rng):
    """Linear births, quadratic deaths: always an entrance boundary."""
    a, b0 = rng.uniform(0.5, 3.0), rng.uniform(0.5, 5.0)
    g, dl, e = rng.uniform(0.3, 2.0), rng.uniform(0.0, 3.0), rng.uniform(0.2, 3.0)
    return BirthDeathSpec.from_expressions(f"{a!r}*i+{b0!r}", f"{g!r}*i^2+{dl!r}*i+{e!r}")


def random_entrance_specs(count=10, seed=99):
    rng = np.random.default_rng(seed)
    return [polynomial_entrance_spec(rng) for _ in range(count)]


@pytest.fixture(scope="session")
def closed_form():
    return closed_form_spec()


@pytest.fixture(scope="session")
def closed_form_lambda(closed_form):
    return decay_parameter(closed_form, 1e-12).lambda_


@pytest.fixture(scope="session")
def reflecting_primal():
    # reflecting chain whose dual is the closed-form absorbed chain
    return BirthDeathSpec.from_expressions("(i+2)^2", "i+3", convention="reflecting")


@pytest.fixture(scope="session")
def entrance_specs():
    return random_entrance_specs()


@pytest.fixture
def two_state():
    # eigenvalues -2 and -5; eta = 1, nu = (2/3, 1/3), gap 3
    Q = np.array([[-3.0, 1.0], [2.0, -4.0]])
    return FiniteAbsorbingChain(Q, np.array([2.0, 2.0]))
