import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from plateshape.mesh import generate_disk, generate_rectangle
from plateshape.rm_fem import MaterialParams
from plateshape import shape_calculus as sc

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def unit_params():
    return MaterialParams(t=0.1, lam=1.0, mu=1.0, k=1.0)


@pytest.fixture(scope="session")
def disk2():
    return generate_disk(1.0, 2)


@pytest.fixture(scope="session")
def disk3():
    return generate_disk(1.0, 3)


@pytest.fixture(scope="session")
def square8():
    return generate_rectangle(1.0, 1.0, 8, 8)


@pytest.fixture(scope="session")
def disk3_problem(disk3, unit_params):
    return sc.ShapeProblem(disk3, unit_params, n_eigs=10)


@pytest.fixture(scope="session")
def disk2_problem(disk2, unit_params):
    return sc.ShapeProblem(disk2, unit_params, n_eigs=10)


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)
