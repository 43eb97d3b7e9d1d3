import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from conftest import random_density
from dilate_forge.core import SIGMA_X, SIGMA_Z, apply_superop
from dilate_forge.dilation import NotFactorableError, dilate
from dilate_forge.generators import (
    TimeGrid,
    amplitude_damping,
    dephasing,
    drive_x,
    driven_damping,
    propagate_channel,
    rwa_driving,
    unitary_only,
)
from dilate_forge.simulate import compare_paths, evolve_dilated, oracle_path
from dilate_forge.transforms import (
    FrameSpec,
    PerturbationSpec,
    RankChangeError,
    asymptotic_tau,
    commutator_residual,
    compose_commuting,
    frame_change,
    path_superops,
    perturbative_channel,
    perturbative_pipeline,
    rescale_time,
    tensor_independent,
)

GRID = TimeGrid(0.0, 1.0, 1000)
WINDOW = GRID.window(10)


@pytest.fixture(scope="module")
def rhos():
    rng = np.random.default_rng(11)
    return np.array([random_density(2, rng) for _ in range(3)])


@pytest.fixture(scope="module")
def deph():
    return dilate(dephasing(1.0), GRID)


@given(s=st.floats(0, 3), t=st.floats(0, 3))
def test_frame_unitary_is_one_parameter_group(s, t):
    frame = FrameSpec(0.7 * SIGMA_Z + 0.2 * SIGMA_X)
    np.testing.assert_allclose(frame.unitary(s + t), frame.unitary(s) @ frame.unitary(t),
                               atol=1e-12)
    np.testing.assert_allclose(frame.unitary(t), expm(-1j * frame.h0 * t), atol=1e-12)


def test_frame_spec_rejects_non_hermitian():
    with pytest.raises(ValueError):
        FrameSpec(np.array([[0, 1], [0, 0]]))


def test_frame_change_reaches_lab_dynamics(rhos):
    tilde = dilate(amplitude_damping(1.0), GRID)
    lab = frame_change(FrameSpec(SIGMA_Z), tilde)
    err = compare_paths(evolve_dilated(lab, rhos, WINDOW),
                        oracle_path(amplitude_damping(1.0, 2.0), rhos, WINDOW)).max_distance
    assert err < 1e-7
    # H = H0 kron 1 + U0 H~ U0^dag
    i = 500
    u0 = np.kron(expm(-1j * SIGMA_Z * GRID.times[i]), np.eye(2))
    expect = np.kron(SIGMA_Z, np.eye(2)) + u0 @ tilde.hamiltonians[i] @ u0.conj().T
    np.testing.assert_allclose(lab.hamiltonians[i], expect, atol=1e-12)


def test_compose_is_order_independent_and_adds_rates(rhos):
    da, db = dilate(dephasing(0.3), GRID), dilate(dephasing(0.5), GRID)
    ab, ba = compose_commuting(da, db), compose_commuting(db, da)
    assert ab.ancilla_dim == 4
    s_ab, s_ba = evolve_dilated(ab, rhos, WINDOW), evolve_dilated(ba, rhos, WINDOW)
    assert compare_paths(s_ab, s_ba).max_distance < 1e-7
    assert compare_paths(s_ab, oracle_path(dephasing(0.8), rhos, WINDOW)).max_distance < 1e-6


def test_compose_rejects_non_commuting():
    da = dilate(dephasing(0.3), GRID)
    dx = dilate(unitary_only(SIGMA_X), GRID)
    assert commutator_residual(da, dx) > 1e-3
    with pytest.raises(ValueError, match="do not commute"):
        compose_commuting(da, dx)


def test_path_superops_match_channel(deph):
    fam = propagate_channel(dephasing(1.0), GRID)
    idx = [0, 100, 1000]
    np.testing.assert_allclose(path_superops(deph, idx), fam.superops[idx], atol=1e-10)


def test_perturbative_channel_is_first_order():
    grid = TimeGrid(0.0, 1.0, 500)
    base = propagate_channel(amplitude_damping(1.0), grid).superops
    errs = []
    for delta in (0.02, 0.01):
        p = PerturbationSpec(amplitude_damping(1.0), drive_x(1.0), delta)
        e1 = perturbative_channel(p, grid)
        full = propagate_channel(p.full, grid).superops
        errs.append(np.abs(full - base - delta * e1).max())
    # the remainder is O(delta^2)
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_perturbation_spec_validation():
    with pytest.raises(ValueError):
        PerturbationSpec(dephasing(1.0), drive_x(1.0), -0.1)
    p = PerturbationSpec(dephasing(1.0), drive_x(1.0), 0.5)
    assert len(p.full.hamiltonian_terms) == 1


def test_perturbative_pipeline_matches_driven_damping(rhos):
    p = PerturbationSpec(amplitude_damping(1.0), drive_x(1.0), 0.01)
    path = perturbative_pipeline(p, GRID)
    err = compare_paths(evolve_dilated(path, rhos, WINDOW),
                        oracle_path(driven_damping(1.0, 0.01), rhos, WINDOW)).max_distance
    assert err < 1e-4


def test_rank_changing_perturbation_is_rejected():
    p = PerturbationSpec(unitary_only(SIGMA_X), dephasing(1.0), 0.01)
    with pytest.raises(RankChangeError, match="grid index"):
        perturbative_pipeline(p, GRID)


def test_rescale_reproduces_dilation(deph, rhos):
    rm = rescale_time(deph, h0=2.0)
    np.testing.assert_allclose(rm.hamiltonian, 2.0 * rm.x)
    assert np.isnan(rm.h[0]) and np.all(np.diff(rm.tau) > 0)
    omega = np.diag([1.0, 0.0])
    for i in (10, 300, 1000):
        u, up = rm.unitary(i), deph.unitaries[i]
        for r in rhos:
            full = np.kron(r, omega)
            np.testing.assert_allclose(u @ full @ u.conj().T, up @ full @ up.conj().T, atol=1e-7)


def test_rescale_rejects_non_factorable_and_bad_h0(deph):
    with pytest.raises(ValueError):
        rescale_time(deph, h0=0.0)
    with pytest.raises(NotFactorableError):
        rescale_time(dilate(rwa_driving(1.0, 2.0, 0.3), GRID))


def test_dephasing_tau_converges():
    # integral of g / (2 sqrt(exp(2 g t) - 1)) over [0, inf) is pi / 4 for any g
    h = lambda t: 4 / (2 * np.sqrt(np.expm1(8 * t)))  # noqa: E731
    taus = asymptotic_tau(h, 1.0, [2.0, 5.0, 10.0])
    assert taus[-1] == pytest.approx(np.pi / 4, abs=1e-9)
    assert abs(taus[2] - taus[1]) < abs(taus[1] - taus[0])


def test_tensor_independent_structure(deph):
    two = tensor_independent([deph], n=2)
    assert (two.system_dim, two.ancilla_dim) == (4, 4)
    assert two.h_valid_from == deph.h_valid_from
    i = 200
    # [sys1, sys2, anc1, anc2] ordering: the reduced channel is a product
    rho = np.kron(np.full((2, 2), 0.5), np.diag([1.0, 0.0]))
    sim = evolve_dilated(two, rho, GRID.window(10))
    fam = propagate_channel(dephasing(1.0), GRID).superops
    single = apply_superop(fam[i], np.full((2, 2), 0.5))
    np.testing.assert_allclose(sim.reduced[i - 10], np.kron(single, np.diag([1.0, 0.0])),
                               atol=1e-6)


def test_tensor_independent_validation(deph):
    with pytest.raises(ValueError, match="cap"):
        tensor_independent([deph], n=5, max_dim=64)
    with pytest.raises(ValueError):
        tensor_independent([deph, deph], n=3)
    other = dilate(dephasing(1.0), TimeGrid(0.0, 1.0, 500))
    with pytest.raises(ValueError):
        tensor_independent([deph, other])
    assert tensor_independent([deph]) is deph
