import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from dilate_forge.core import SIGMA_X, SIGMA_Z
from dilate_forge.propagators import (
    UnitaryIntegrator,
    evolve_unitary,
    midpoint_values,
    sqrt_time_start,
)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_midpoints_exact_for_quintics(coeffs):
    t = np.linspace(0.0, 1.0, 21)
    p = np.polynomial.Polynomial(coeffs)
    mids = midpoint_values(p(t))
    centre = 0.5 * (t[1:] + t[:-1])
    # ends use cubic stencils
    np.testing.assert_allclose(mids[2:-2], p(centre[2:-2]), atol=1e-10)
    cubic = np.polynomial.Polynomial(coeffs[:4])
    np.testing.assert_allclose(midpoint_values(cubic(t)), cubic(centre), atol=1e-10)


def test_midpoints_short_paths():
    np.testing.assert_allclose(midpoint_values(np.array([0.0, 2.0, 4.0])), [1.0, 3.0])


def test_constant_hamiltonian_matches_exponential():
    t = np.linspace(0.0, 2.0, 401)
    h = 0.8 * SIGMA_X + 0.3 * SIGMA_Z
    u = evolve_unitary(lambda _: h, t, np.eye(2))
    np.testing.assert_allclose(u[-1], expm(-1j * h * 2.0), atol=1e-10)
    sampled = evolve_unitary(np.broadcast_to(h, (401, 2, 2)), t, np.eye(2))
    np.testing.assert_allclose(sampled, u, atol=1e-12)


def test_commuting_time_dependent_hamiltonian():
    # H(t) = cos(t) sx integrates to sin(t) sx
    t = np.linspace(0.0, 3.0, 601)
    hs = np.cos(t)[:, None, None] * SIGMA_X
    u = evolve_unitary(hs, t, np.eye(2))
    np.testing.assert_allclose(u[-1], expm(-1j * np.sin(3.0) * SIGMA_X), atol=1e-9)


def test_start_stop_window():
    t = np.linspace(0.0, 1.0, 101)
    u = evolve_unitary(lambda _: SIGMA_Z, t, np.eye(2), start=20, stop=60)
    assert u.shape == (41, 2, 2)
    np.testing.assert_allclose(u[-1], expm(-1j * SIGMA_Z * 0.4), atol=1e-10)


def test_reunitarization_events_recorded():
    integ = UnitaryIntegrator(unitarity_tol=1e-30)
    t = np.linspace(0.0, 1.0, 11)
    u = integ.run(lambda _: SIGMA_X, t, np.eye(2))
    assert len(integ.reunitarizations) == 10
    np.testing.assert_allclose(u[-1] @ u[-1].conj().T, np.eye(2), atol=1e-14)


@pytest.mark.parametrize("g", [0.5, 2.0])
def test_sqrt_time_start_handles_inverse_sqrt_singularity(g):
    # H = c / sqrt(t) sx has angle 2 c sqrt(t)
    c = g / 2
    u = sqrt_time_start(lambda t: c / np.sqrt(t) * SIGMA_X, 0.09, 2, n_steps=200)
    np.testing.assert_allclose(u, expm(-1j * 2 * c * 0.3 * SIGMA_X), atol=1e-10)
