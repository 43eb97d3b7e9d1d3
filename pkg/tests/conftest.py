import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)


def random_density(d, rng, rank=None):
    rank = d if rank is None else rank
    a = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    r = a @ a.conj().T
    return r / np.trace(r)


def random_kraus(d, r, rng):
    """Kraus operators of a random channel: blocks of a random isometry."""
    z = rng.normal(size=(d * r, d)) + 1j * rng.normal(size=(d * r, d))
    q, _ = np.linalg.qr(z)
    return [q[k * d:(k + 1) * d] for k in range(r)]


def random_unitary(d, rng):
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
