import numpy as np
import pytest
from decoseed.araki_zurek import SpectralDensity, validate_model
from decoseed.harness import parse_scenario

SMALL_AZ_DOCUMENT = """
[scenario]
name = small_az
model = araki_zurek

[system]
h_s = [[0, 0], [0, 0]]
v_s = [[0.5, 0], [0, -0.5]]

[environment]
family = gaussian
sigma = 1.0

[initial_state]
rho0 = plus

[time]
t_max = 8.0
n_steps = 65

[oracle]
dim_e = 16
tolerance = 1e-10
"""


@pytest.fixture
def rng():
    """Seeded generator so that random operators are reproducible."""
    return np.random.default_rng(20240611)


@pytest.fixture
def qubit_spec():
    """Two sectors with eigenvalues -1/2 and 1/2 and no system Hamiltonian."""
    return validate_model(np.zeros((2, 2)), np.diag([0.5, -0.5]))


@pytest.fixture
def qutrit_spec():
    """Three sectors -1, 0, 1 with a commuting system Hamiltonian."""
    return validate_model(np.diag([0.3, -0.2, 0.1]), np.diag([-1.0, 0.0, 1.0]))


@pytest.fixture
def plus_state():
    return np.full((2, 2), 0.5, dtype=complex)


@pytest.fixture
def gaussian_mu():
    return SpectralDensity.gaussian(mean=0.0, sigma=1.0)


@pytest.fixture
def small_az_document():
    return SMALL_AZ_DOCUMENT


@pytest.fixture
def small_az_config():
    """Fast Gaussian scenario with a 2 x 16 oracle."""
    return parse_scenario(SMALL_AZ_DOCUMENT)
