import numpy as np
import pytest
from hypothesis import settings

from gcorrespond.models import parse_formula
from gcorrespond.tables import ContingencyTable, FactorSpec, simulate_scenario

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def scenario_table():
    return simulate_scenario()


@pytest.fixture
def m1_factors():
    return (FactorSpec("X", 3), FactorSpec("Y", 2), FactorSpec("Z", 2))


@pytest.fixture
def m1():
    return parse_formula("XY+XZ+YZ", "XYZ")


@pytest.fixture
def table_2x2():
    # cells (y,x) in order 00, 01, 10, 11
    return ContingencyTable((FactorSpec("Y", 2), FactorSpec("X", 2)), np.array([5, 7, 3, 9]))


def random_table(rng, factors, N=200):
    n = int(np.prod([f.levels for f in factors]))
    return ContingencyTable(tuple(factors), rng.multinomial(N, np.full(n, 1.0 / n)))
