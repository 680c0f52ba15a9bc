import pytest

from gwve.environment import Environment
from gwve.offspring import Binomial, FiniteTable, Geometric


@pytest.fixture
def geo():
    return Geometric(0.5)


@pytest.fixture
def table():
    return FiniteTable([0.25, 0.5, 0.25])


@pytest.fixture
def e1():
    """Constant geometric(1/2): critical, closed forms known."""
    return Environment.constant(Geometric(0.5))


@pytest.fixture
def e2():
    """Alternating geometric(1/2) / table(1/4,1/2,1/4): critical, varying."""
    return Environment.periodic([Geometric(0.5), FiniteTable([0.25, 0.5, 0.25])])


@pytest.fixture
def e3():
    """Constant binomial(2, 3/4): supercritical control."""
    return Environment.constant(Binomial(2, 0.75))
