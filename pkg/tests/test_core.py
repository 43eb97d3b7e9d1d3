import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_density, random_kraus, random_unitary, seeds
from dilate_forge.core import (
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    apply_kraus,
    apply_superop,
    choi_to_kraus,
    commutator_superop,
    embed,
    hermitian_basis,
    is_density_matrix,
    kraus_to_superop,
    kron,
    maximally_entangled,
    operator_norm,
    partial_trace,
    partial_trace_ancilla,
    polar_unitary,
    reshuffle,
    trace_distance,
    unreshuffle,
    unvec,
    validate_cptp,
    vec,
)

dims = st.integers(min_value=1, max_value=4)


def test_vec_is_column_stacking():
    m = np.array([[1, 2], [3, 4]])
    np.testing.assert_array_equal(vec(m), [1, 3, 2, 4])
    np.testing.assert_array_equal(unvec(vec(m)), m)


def test_kraus_superop_matches_column_stacking_identity():
    # vec(A X B) = (B^T kron A) vec(X)
    rng = np.random.default_rng(0)
    m = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    x = rng.normal(size=(3, 3))
    np.testing.assert_allclose(kraus_to_superop([m]) @ vec(x), vec(m @ x @ m.conj().T))
    np.testing.assert_allclose(kraus_to_superop([m]), np.kron(m.conj(), m))


def test_identity_channel_choi_is_maximally_entangled_projector():
    d = 3
    omega = maximally_entangled(d)
    np.testing.assert_allclose(reshuffle(np.eye(d * d)), np.outer(omega, omega.conj()))


def test_choi_index_convention():
    rng = np.random.default_rng(1)
    d = 2
    s = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    c = reshuffle(s)
    for a in range(d):
        for i in range(d):
            for b in range(d):
                for j in range(d):
                    assert c[a * d + i, b * d + j] == s[a + d * b, i + d * j]


@given(seeds, dims)
def test_reshuffle_roundtrip(seed, d):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(d * d, d * d)) + 1j * rng.normal(size=(d * d, d * d))
    np.testing.assert_allclose(unreshuffle(reshuffle(s)), s)
    np.testing.assert_allclose(reshuffle(unreshuffle(s)), s)


@given(seeds, dims, st.integers(min_value=1, max_value=4))
def test_kraus_roundtrip_preserves_channel(seed, d, r):
    rng = np.random.default_rng(seed)
    kraus = random_kraus(d, r, rng)
    s = kraus_to_superop(kraus)
    rebuilt = choi_to_kraus(reshuffle(s))
    assert len(rebuilt) <= min(r, d * d)
    np.testing.assert_allclose(kraus_to_superop(rebuilt), s, atol=1e-10)
    rho = random_density(d, rng)
    np.testing.assert_allclose(apply_superop(s, rho), apply_kraus(kraus, rho), atol=1e-12)


@given(seeds, dims, st.integers(min_value=1, max_value=3))
def test_random_channels_are_cptp(seed, d, r):
    report = validate_cptp(kraus_to_superop(random_kraus(d, r, np.random.default_rng(seed))))
    assert report.is_cptp


def test_validate_cptp_rejects_transpose_and_non_tp():
    d = 2
    transpose = np.zeros((4, 4))
    for i in range(d):
        for j in range(d):
            transpose[j + d * i, i + d * j] = 1
    assert not validate_cptp(transpose).is_cp
    assert validate_cptp(transpose).is_tp
    assert not validate_cptp(0.5 * np.eye(4)).is_tp


@given(seeds, dims, dims)
def test_partial_trace_of_product(seed, da, db):
    rng = np.random.default_rng(seed)
    a, b = random_density(da, rng), random_density(db, rng)
    ab = np.kron(a, b)
    np.testing.assert_allclose(partial_trace_ancilla(ab, da, db), a, atol=1e-12)
    np.testing.assert_allclose(partial_trace(ab, [da, db], keep=[0]), a, atol=1e-12)
    np.testing.assert_allclose(partial_trace(ab, [da, db], keep=[1]), b, atol=1e-12)


def test_partial_trace_three_factors_and_batch():
    rng = np.random.default_rng(2)
    rs = [random_density(d, rng) for d in (2, 3, 2)]
    full = kron(*rs)
    np.testing.assert_allclose(partial_trace(full, [2, 3, 2], keep=[0, 2]),
                               np.kron(rs[0], rs[2]), atol=1e-12)
    batch = np.stack([full, full])
    assert partial_trace_ancilla(batch, 6, 2).shape == (2, 6, 6)


def test_trace_distance_values():
    up, down = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    assert trace_distance(up, down) == pytest.approx(1.0)
    assert trace_distance(up, np.eye(2) / 2) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        trace_distance(up, np.eye(3))


@given(seeds, dims)
def test_trace_distance_metric_bounds(seed, d):
    rng = np.random.default_rng(seed)
    a, b, c = (random_density(d, rng) for _ in range(3))
    dab = trace_distance(a, b)
    assert -1e-12 <= dab <= 1 + 1e-12
    assert dab == pytest.approx(trace_distance(b, a))
    assert dab <= trace_distance(a, c) + trace_distance(c, b) + 1e-12


@given(seeds, dims, st.integers(min_value=1, max_value=3))
def test_channels_contract_trace_distance(seed, d, r):
    rng = np.random.default_rng(seed)
    kraus = random_kraus(d, r, rng)
    a, b = random_density(d, rng), random_density(d, rng)
    assert trace_distance(apply_kraus(kraus, a), apply_kraus(kraus, b)) <= \
        trace_distance(a, b) + 1e-12


def test_operator_norm_and_density_check():
    assert operator_norm(np.diag([3.0, -5.0])) == pytest.approx(5.0)
    assert operator_norm(np.zeros((0, 0))) == 0.0
    assert is_density_matrix(np.eye(2) / 2)
    assert not is_density_matrix(np.diag([1.5, -0.5]))
    assert not is_density_matrix(np.eye(2))


def test_hermitian_basis_is_orthonormal():
    b = hermitian_basis(3)
    gram = np.einsum("aij,bij->ab", b.conj(), b)
    np.testing.assert_allclose(gram, np.eye(9), atol=1e-14)


def test_commutator_superop():
    rho = np.array([[0.7, 0.2j], [-0.2j, 0.3]])
    np.testing.assert_allclose(apply_superop(commutator_superop(SIGMA_X), rho),
                               -1j * (SIGMA_X @ rho - rho @ SIGMA_X))


@given(seeds, st.integers(min_value=1, max_value=5))
def test_polar_unitary(seed, d):
    rng = np.random.default_rng(seed)
    u = random_unitary(d, rng)
    np.testing.assert_allclose(polar_unitary(u), u, atol=1e-12)
    w = polar_unitary(u + 0.1 * rng.normal(size=(d, d)))
    np.testing.assert_allclose(w @ w.conj().T, np.eye(d), atol=1e-12)


def test_embed_orders_targets():
    np.testing.assert_allclose(embed(SIGMA_Z, [2, 2], [1]), np.kron(np.eye(2), SIGMA_Z))
    op = np.kron(SIGMA_X, SIGMA_Y)
    np.testing.assert_allclose(embed(op, [2, 2, 2], [0, 2]),
                               kron(SIGMA_X, np.eye(2), SIGMA_Y), atol=1e-14)
    np.testing.assert_allclose(embed(op, [2, 2], [1, 0]), np.kron(SIGMA_Y, SIGMA_X), atol=1e-14)
