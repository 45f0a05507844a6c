import numpy as np
import pytest

from kmf.model import Coefficients, make_field
from kmf.noise import NoiseStream


@pytest.fixture(autouse=True)
def testing_environment(monkeypatch):
    monkeypatch.setenv('KMF_ENV', 'testing')
    monkeypatch.setenv('KMF_TIMESTAMP', 'false')
    for name in ('KMF_THREADS', 'KMF_DT', 'KMF_T'):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def unit_coeffs():
    return Coefficients(alpha=1.0, alpha_prime=1.0, beta=1.0)


@pytest.fixture
def free_field(unit_coeffs):
    return make_field('linear', unit_coeffs)


@pytest.fixture
def linear_field():
    return make_field('linear', Coefficients(1.0, 1.0, 1.0, gamma=0.1))


@pytest.fixture
def sinusoidal_field():
    return make_field('sinusoidal', Coefficients(1.0, 1.0, 1.0, gamma=0.05, delta=0.05))


@pytest.fixture
def noise():
    return NoiseStream(20240601)


@pytest.fixture
def rng():
    return np.random.default_rng(7)
