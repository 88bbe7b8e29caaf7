import pytest

from rpemsim.estimator import ParameterBox, ParameterVector
from rpemsim.pu import default_machine


@pytest.fixture(scope="session")
def machine():
    """Reference plant base and per-unit parameters."""
    return default_machine()


@pytest.fixture(scope="session")
def base(machine):
    return machine[0]


@pytest.fixture(scope="session")
def params(machine):
    return machine[1]


@pytest.fixture(scope="session")
def omega_n(base):
    return base.omega_n


@pytest.fixture(scope="session")
def known_x(params):
    return (params.x_d, params.x_q)


@pytest.fixture(scope="session")
def theta_nominal(params):
    return ParameterVector(psi_m=params.psi_m, r_s=params.r_s)


@pytest.fixture(scope="session")
def wide_box():
    return ParameterBox(psi_m_min=0.1, psi_m_max=2.0, r_s_min=0.0, r_s_max=0.5)
