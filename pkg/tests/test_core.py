import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import qndm.core as core
from qndm.core import (
    PAULI_X,
    PAULI_Z,
    DensityState,
    KrausChannel,
    SpectralObservable,
    UnitaryOp,
    amplitude_damping,
    apply_channel,
    depolarizing,
    evolve,
    hermitian_eigendecompose,
    partial_trace,
    tensor,
)
from qndm.errors import NumericalError, ValidationError

from instances import haar_unitary, random_density, random_hermitian


def test_eigendecompose_identity_is_one_eigenspace():
    obs = hermitian_eigendecompose(np.eye(2))
    assert obs.eigenvalues.tolist() == [1.0]
    assert np.allclose(obs.projectors[0], np.eye(2))


def test_eigendecompose_sigma_z():
    obs = hermitian_eigendecompose(PAULI_Z)
    assert np.allclose(obs.eigenvalues, [-1, 1])
    assert np.allclose(obs.projectors[0], np.diag([0, 1]))
    assert np.allclose(obs.projectors[1], np.diag([1, 0]))


def test_eigendecompose_sigma_x():
    obs = hermitian_eigendecompose(PAULI_X)
    assert np.allclose(obs.eigenvalues, [-1, 1])
    assert np.allclose(obs.projectors[0], 0.5 * (np.eye(2) - PAULI_X), atol=1e-14)
    assert np.allclose(obs.projectors[1], 0.5 * (np.eye(2) + PAULI_X), atol=1e-14)
    p0, p1 = obs.projectors
    assert np.max(np.abs(p0 @ p1)) < 1e-14
    assert np.max(np.abs(-p0 + p1 - PAULI_X)) < 1e-14


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_eigendecompose_reconstructs_random_hermitian(n, seed):
    rng = np.random.default_rng(seed)
    h = random_hermitian(rng, n, scale=rng.uniform(0.1, 10.0))
    obs = hermitian_eigendecompose(h)
    assert np.max(np.abs(obs.matrix - h)) < 1e-9
    # independent oracle: LAPACK eigenvalues
    assert np.allclose(obs.eigenvalues, np.linalg.eigvalsh(h), atol=1e-10)
    assert np.all(np.diff(obs.eigenvalues) > 1e-9)


def test_eigendecompose_sixteen_dimensional(rng):
    h = random_hermitian(rng, 16)
    obs = hermitian_eigendecompose(h)
    assert np.max(np.abs(obs.matrix - h)) < 1e-9


def test_degenerate_eigenvalues_share_one_projector(rng):
    v = haar_unitary(rng, 3)
    h = v @ np.diag([1.0, 1.0, -1.0]) @ v.conj().T
    obs = hermitian_eigendecompose(h)
    assert np.allclose(obs.eigenvalues, [-1.0, 1.0])
    ranks = [round(np.trace(p).real) for p in obs.projectors]
    assert ranks == [1, 2]


def test_near_degenerate_values_are_merged():
    obs = hermitian_eigendecompose(np.diag([0.5, 0.5 + 1e-11, 2.0]))
    assert obs.n_outcomes == 2


def test_eigendecompose_rejects_non_hermitian():
    with pytest.raises(ValidationError):
        hermitian_eigendecompose(np.array([[0, 1], [0, 0]]))


def test_eigendecompose_rejects_large_dimension():
    with pytest.raises(ValidationError):
        hermitian_eigendecompose(np.eye(17))


def test_jacobi_iteration_cap_raises(monkeypatch):
    monkeypatch.setattr(core, "JACOBI_MAX_SWEEPS", 0)
    h = random_hermitian(np.random.default_rng(3), 6)
    with pytest.raises(NumericalError):
        hermitian_eigendecompose(h)


def test_jacobi_is_bit_reproducible(rng):
    h = random_hermitian(rng, 5)
    a, b = hermitian_eigendecompose(h), hermitian_eigendecompose(h)
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    assert all(np.array_equal(p, q) for p, q in zip(a.projectors, b.projectors))


def test_spectral_observable_validates_projectors():
    with pytest.raises(ValidationError):
        SpectralObservable([0.0, 1.0], (np.diag([1, 0]), np.diag([1, 0])))
    with pytest.raises(ValidationError):
        SpectralObservable([1.0, 0.0], (np.diag([1, 0]), np.diag([0, 1])))
    with pytest.raises(ValidationError):
        SpectralObservable([0.0], (np.diag([1, 0]),))


def test_density_state_invariants():
    with pytest.raises(ValidationError):
        DensityState(np.array([[0.5, 0.1], [0.2, 0.5]]))
    with pytest.raises(ValidationError):
        DensityState(np.diag([0.6, 0.6]))
    with pytest.raises(ValidationError):
        DensityState(np.diag([1.2, -0.2]))
    with pytest.raises(ValidationError):
        DensityState(np.array([[np.nan, 0], [0, 1]]))


def test_unitary_invariant():
    with pytest.raises(ValidationError):
        UnitaryOp(np.array([[1, 1], [0, 1]]))


def test_evolve_identity_is_noop(rng):
    rho = random_density(rng, 3)
    assert np.allclose(evolve(rho, UnitaryOp.identity(3)).matrix, rho.matrix)


def test_evolve_flips_ground_state():
    out = evolve(DensityState.diagonal([1, 0]), UnitaryOp(PAULI_X))
    assert np.allclose(out.matrix, np.diag([0, 1]))


def test_evolve_phase_keeps_trace_and_purity():
    plus = DensityState.pure([1, 1])
    u = UnitaryOp(np.diag(np.exp(-1j * np.pi / 4 * np.array([1, -1]))))
    out = evolve(plus, u)
    assert abs(np.trace(out.matrix) - 1) < 1e-12
    assert abs(out.purity() - 1) < 1e-12
    expected = 0.5 * np.array([[1, -1j], [1j, 1]])
    assert np.allclose(out.matrix, expected)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_evolve_preserves_trace_and_hermiticity(n, seed):
    rng = np.random.default_rng(seed)
    rho = random_density(rng, n)
    out = evolve(rho, UnitaryOp(haar_unitary(rng, n)))
    assert abs(np.trace(out.matrix) - 1) < 1e-12
    assert np.max(np.abs(out.matrix - out.matrix.conj().T)) < 1e-12


def test_evolve_dimension_mismatch():
    with pytest.raises(ValidationError):
        evolve(DensityState.diagonal([1, 0]), UnitaryOp.identity(3))


def test_damping_zero_is_identity(rng):
    rho = random_density(rng, 2)
    assert np.allclose(apply_channel(rho, amplitude_damping(0.0)).matrix, rho.matrix)


def test_full_damping_relaxes_to_ground():
    out = apply_channel(DensityState.diagonal([0, 1]), amplitude_damping(1.0))
    assert np.allclose(out.matrix, np.diag([1, 0]))


def test_half_damping_of_excited_state():
    out = apply_channel(DensityState.diagonal([0, 1]), amplitude_damping(0.5))
    assert np.allclose(out.matrix, np.diag([0.5, 0.5]))


@settings(max_examples=40, deadline=None)
@given(p1=st.floats(0, 1), p2=st.floats(0, 1), q=st.floats(0, 1))
def test_damping_composes_on_diagonal_states(p1, p2, q):
    rho = DensityState.diagonal([1 - q, q])
    two = apply_channel(apply_channel(rho, amplitude_damping(p1)), amplitude_damping(p2))
    one = apply_channel(rho, amplitude_damping(1 - (1 - p1) * (1 - p2)))
    assert np.max(np.abs(two.matrix - one.matrix)) < 1e-12


def test_damping_in_rotated_basis():
    g = np.array([1, -1]) / np.sqrt(2)
    e = np.array([1, 1]) / np.sqrt(2)
    out = apply_channel(DensityState.pure(e), amplitude_damping(1.0, g, e))
    assert np.allclose(out.matrix, np.outer(g, g))


def test_channel_must_be_trace_preserving():
    with pytest.raises(ValidationError):
        KrausChannel((np.diag([1.0, 0.5]),))
    with pytest.raises(ValidationError):
        amplitude_damping(1.5)


def test_depolarizing_formula(rng):
    for n in (2, 3):
        rho = random_density(rng, n)
        out = apply_channel(rho, depolarizing(n, 0.3))
        assert np.allclose(out.matrix, 0.7 * rho.matrix + 0.3 * np.eye(n) / n)


def test_stinespring_isometry_matches_kraus_sum(rng):
    ch = amplitude_damping(0.37)
    v = ch.isometry()
    assert np.allclose(v.conj().T @ v, np.eye(2))
    rho = random_density(rng, 2)
    big = v @ rho.matrix @ v.conj().T
    assert np.allclose(partial_trace(big, 0, [2, 2]).matrix, apply_channel(rho, ch).matrix)


def test_tensor_identities():
    assert np.array_equal(tensor(np.eye(2), np.eye(2)), np.eye(4))


def test_partial_trace_of_product(rng):
    a, b = random_density(rng, 2), random_density(rng, 3)
    prod = DensityState(tensor(a.matrix, b.matrix))
    assert np.max(np.abs(partial_trace(prod, 0, [2, 3]).matrix - a.matrix)) < 1e-12
    assert np.max(np.abs(partial_trace(prod, 1, [2, 3]).matrix - b.matrix)) < 1e-12


def test_partial_trace_of_bell_state():
    bell = DensityState.pure([1, 0, 0, 1])
    assert np.allclose(partial_trace(bell, 0, [2, 2]).matrix, np.eye(2) / 2)


def test_partial_trace_three_parties(rng):
    a, b, c = random_density(rng, 2), random_density(rng, 2), random_density(rng, 3)
    m = tensor(tensor(a.matrix, b.matrix), c.matrix)
    ac = partial_trace(m, [0, 2], [2, 2, 3])
    assert np.allclose(ac.matrix, tensor(a.matrix, c.matrix))


def test_partial_trace_bad_factorization():
    with pytest.raises(ValidationError):
        partial_trace(DensityState.maximally_mixed(4), 0, [2, 3])
    with pytest.raises(ValidationError):
        partial_trace(DensityState.maximally_mixed(4), 2, [2, 2])
