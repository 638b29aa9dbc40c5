import numpy as np
import pytest

from bosonic_link.device import lossless_device, paper_device


@pytest.fixture(scope="session")
def paper():
    return paper_device()


@pytest.fixture(scope="session")
def lossless():
    return lossless_device()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_hermitian(rng, n):
    m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (m + m.conj().T) / 2


def random_density(rng, n, rank=None):
    rank = n if rank is None else rank
    x = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    rho = x @ x.conj().T
    return rho / np.trace(rho).real
