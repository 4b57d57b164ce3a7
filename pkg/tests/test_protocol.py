import numpy as np
import pytest

from qndm.core import PAULI_Z, DensityState, UnitaryOp, hermitian_eigendecompose
from qndm.errors import ValidationError
from qndm.protocol import (
    CharFnGrid,
    CouplingEvent,
    DetectorModel,
    PhaseInsertion,
    ProtocolSchedule,
    char_fn_detector,
    char_fn_exact,
    char_fn_grid,
    detector_state,
    first_moment,
    lambda_grid,
    reconstruct_distribution,
    sample_char_fn_grid,
    sample_shots,
    second_moment,
)
from qndm.quasiprob import amplitudes_from_schedule, collapse
from qndm.scenarios import LGQubitScenario, cyclic_qubit_work, work_quasiprob, work_schedule

from instances import haar_unitary, random_schedule, random_state


def _sz():
    return hermitian_eigendecompose(PAULI_Z)


def test_g_at_zero_is_one(rng):
    for _ in range(20):
        s = random_schedule(rng, int(rng.integers(2, 5)), channels=True, phase=rng.random() < 0.5)
        assert abs(char_fn_exact(s, 0.0) - 1.0) < 1e-12
        assert abs(char_fn_detector(s, DetectorModel(), 0.0) - 1.0) < 1e-12


def test_detector_path_matches_branch_propagation(rng):
    det = DetectorModel()
    worst = 0.0
    for _ in range(50):
        s = random_schedule(rng, int(rng.integers(2, 5)), channels=True, phase=rng.random() < 0.3)
        for lam in rng.uniform(-5, 5, size=3):
            worst = max(worst, abs(char_fn_exact(s, lam) - char_fn_detector(s, det, lam)))
    assert worst < 1e-10


def test_branch_propagation_matches_path_sum(rng):
    for _ in range(30):
        s = random_schedule(rng, int(rng.integers(2, 4)), channels=True)
        aset = amplitudes_from_schedule(s)
        for lam in (0.3, -1.7, 4.2):
            assert abs(char_fn_exact(s, lam) - aset.fourier(lam)) < 1e-10


def test_hermitian_symmetry(rng):
    s = random_schedule(rng, 3, channels=True)
    for lam in (0.5, 2.0, 7.3):
        assert abs(char_fn_exact(s, -lam) - np.conj(char_fn_exact(s, lam))) < 1e-12


def test_g_is_bounded(rng):
    s = random_schedule(rng, 3)
    vals = char_fn_grid(s, np.linspace(0, 20, 81)).values
    assert np.all(np.abs(vals) <= 1.0 + 1e-12)


def test_detector_state_is_a_density_matrix(rng):
    s = random_schedule(rng, 3, channels=True)
    r = detector_state(s, DetectorModel(), 1.3, gate_depolarizing=0.05)
    assert abs(np.trace(r) - 1) < 1e-12
    assert np.min(np.linalg.eigvalsh(r)) > -1e-12


def test_depolarizing_shrinks_coherence(rng):
    s = LGQubitScenario(1.0).schedule()
    clean = detector_state(s, DetectorModel(), 0.7)
    noisy = detector_state(s, DetectorModel(), 0.7, gate_depolarizing=0.05)
    assert abs(noisy[0, 1]) < abs(clean[0, 1])


def test_commuting_couplings_give_classical_g():
    # no evolution between two sigma_z couplings: G = sum_i p_i e^{i lambda 2 a_i}
    rho = DensityState.diagonal([0.25, 0.75])
    a = _sz()
    s = ProtocolSchedule(rho, (CouplingEvent(a), CouplingEvent(a)))
    lam = 0.9
    expected = 0.25 * np.exp(2j * lam) + 0.75 * np.exp(-2j * lam)
    assert abs(char_fn_exact(s, lam) - expected) < 1e-12


def test_moments_match_trace_formulas(rng):
    for _ in range(10):
        n = int(rng.integers(2, 4))
        s = random_schedule(rng, n, n_couplings=2)
        c0, u, c1 = s.steps
        rho = s.initial_state.matrix
        b_h = u.matrix.conj().T @ c1.observable.matrix @ u.matrix
        x = c1.strength * b_h + c0.strength * c0.observable.matrix
        assert abs(first_moment(s) - np.trace(x @ rho).real) < 1e-8
        assert abs(second_moment(s) - np.trace(x @ x @ rho).real) < 1e-6


def test_schedule_validation(rng):
    rho = DensityState.pure([1, 0])
    a = _sz()
    with pytest.raises(ValidationError):
        ProtocolSchedule(rho, (CouplingEvent(a),))
    with pytest.raises(ValidationError):
        ProtocolSchedule(rho, (CouplingEvent(a), PhaseInsertion(a, 0.3), PhaseInsertion(a, 0.2), CouplingEvent(a)))
    with pytest.raises(ValidationError):
        ProtocolSchedule(rho, (CouplingEvent(a), UnitaryOp.identity(3), CouplingEvent(a)))
    with pytest.raises(ValidationError):
        ProtocolSchedule(rho, (CouplingEvent(a), "swap", CouplingEvent(a)))
    with pytest.raises(ValidationError):
        CouplingEvent(a, sign=2)


def test_lambda_grid_endpoints():
    g = lambda_grid(100.0, 0.1)
    assert g.size == 1001 and g[0] == 0.0 and abs(g[-1] - 100.0) < 1e-9


def test_exact_grid_requires_unit_g0():
    with pytest.raises(ValidationError):
        CharFnGrid([0.0, 1.0], [0.9, 0.5])


# -- shots --------------------------------------------------------------------------


def test_shots_are_deterministic_per_seed():
    s = LGQubitScenario(1.0).schedule()
    a = sample_shots(s, DetectorModel(), 0.8, 500, 11)
    b = sample_shots(s, DetectorModel(), 0.8, 500, 11)
    c = sample_shots(s, DetectorModel(), 0.8, 500, 12)
    assert a == b and a != c


def test_shot_mean_lies_in_three_sigma_band():
    s = LGQubitScenario(1.0).schedule()
    lam, n = 0.8, 1000
    exact = char_fn_exact(s, lam)
    draws = np.array([sample_shots(s, DetectorModel(), lam, n, sd) for sd in range(500)])
    for part in (np.real, np.imag):
        se = part(draws).std(ddof=1) / np.sqrt(draws.size)
        assert abs(part(draws).mean() - part(exact)) < 3 * se + 1e-12


def test_imaginary_part_sign_convention():
    # the large-shot estimate pins down the sign of Im G
    s = LGQubitScenario(1.0).schedule()
    lam = 1.1
    est = sample_shots(s, DetectorModel(), lam, 10**7, 3)
    assert abs(est - char_fn_exact(s, lam)) < 2e-3


def test_readout_flip_is_corrected():
    s = LGQubitScenario(0.6).schedule()
    lam = 0.9
    draws = np.array([sample_shots(s, DetectorModel(), lam, 2000, sd, readout_flip=0.1) for sd in range(300)])
    exact = char_fn_exact(s, lam)
    se = np.abs(draws.std(ddof=1)) / np.sqrt(draws.size)
    assert abs(draws.mean() - exact) < 4 * se


def test_shot_argument_checks():
    s = LGQubitScenario(1.0).schedule()
    with pytest.raises(ValidationError):
        sample_shots(s, DetectorModel(), 0.5, 0, 1)
    with pytest.raises(ValidationError):
        sample_shots(s, DetectorModel(), 0.5, 10, -1)
    with pytest.raises(ValidationError):
        sample_shots(s, DetectorModel(), 0.5, 10, 1, readout_flip=0.5)


def test_sampled_grid_keeps_g0_exact():
    s = LGQubitScenario(1.0).schedule()
    grid = sample_char_fn_grid(s, DetectorModel(), lambda_grid(5.0, 1.0), 50, 4)
    assert grid.values[0] == 1.0 and grid.n_shots == 50


# -- reconstruction -----------------------------------------------------------------


def test_reconstruction_recovers_work_weights():
    sc = cyclic_qubit_work()
    exact = work_quasiprob(sc)
    grid = char_fn_grid(work_schedule(sc), lambda_grid(100.0, 0.1))
    rec = reconstruct_distribution(grid, {"min": -1.5, "max": 1.5, "step": 0.005}, exact.deltas)
    assert np.max(np.abs(rec.support_weights - exact.weights)) < 1e-10
    assert np.min(np.abs(exact.weights)) > 0.2
    peaks = rec.peaks(0.15)
    assert peaks.size == 5
    assert np.allclose(peaks, [-1, -0.5, 0, 0.5, 1], atol=0.005)
    assert np.all(np.abs(rec.raw_support_weights() - exact.weights) <= rec.leakage_bound() + 1e-12)


def test_reconstruction_density_integrates_to_one():
    sc = cyclic_qubit_work()
    grid = char_fn_grid(work_schedule(sc), lambda_grid(50.0, 0.1))
    rec = reconstruct_distribution(grid, {"min": -np.pi * 10 + 0.01, "max": np.pi * 10 - 0.01, "step": 0.001})
    assert abs(rec.density.sum() * 0.001 - 1.0) < 1e-3


def test_classical_input_reconstructs_nonnegative():
    # diagonal state and commuting dynamics: every amplitude is classical
    a = _sz()
    s = ProtocolSchedule(DensityState.diagonal([0.3, 0.7]), (CouplingEvent(a), UnitaryOp.identity(2), CouplingEvent(a, 1, 0.5)))
    dist = collapse(amplitudes_from_schedule(s))
    assert dist.min_weight >= 0
    grid = char_fn_grid(s, lambda_grid(100.0, 0.1))
    rec = reconstruct_distribution(grid, {"min": -3, "max": 3, "step": 0.01}, dist.deltas)
    # weights read off at the detected peaks, and the fitted support weights
    peaks = rec.peaks(0.2)
    assert np.allclose(peaks, [-2.5, 2.5], atol=0.01)
    assert rec.evaluate(peaks).min() >= -1e-3
    assert rec.support_weights.min() >= -1e-10


def test_nyquist_violation_raises():
    sc = cyclic_qubit_work()
    grid = char_fn_grid(work_schedule(sc), lambda_grid(10.0, 1.0))
    with pytest.raises(ValidationError, match="alias-free"):
        reconstruct_distribution(grid, {"min": -4, "max": 4, "step": 0.01})


def test_support_outside_grid_raises():
    sc = cyclic_qubit_work()
    grid = char_fn_grid(work_schedule(sc), lambda_grid(10.0, 0.5))
    with pytest.raises(ValidationError):
        reconstruct_distribution(grid, {"min": -0.5, "max": 0.5, "step": 0.01}, [-1.0, 0.0, 1.0])


def test_reconstruction_grid_checks():
    grid = CharFnGrid([0.0, 0.5, 1.5], [1.0, 0.5, 0.2])
    with pytest.raises(ValidationError):
        reconstruct_distribution(grid, {"min": -1, "max": 1, "step": 0.1})
    grid = CharFnGrid([0.0, 1.0], [1.0, 0.5])
    with pytest.raises(ValidationError):
        reconstruct_distribution(grid, {"min": 1, "max": -1, "step": 0.1})
    with pytest.raises(ValidationError):
        reconstruct_distribution(grid, {"min": -1, "max": 1})


def test_pure_state_random_dims_path_sum_normalized(rng):
    for n in (2, 3, 4):
        u = UnitaryOp(haar_unitary(rng, n))
        a = hermitian_eigendecompose(np.diag(np.arange(n, dtype=float)))
        s = ProtocolSchedule(random_state(rng, n), (CouplingEvent(a), u, CouplingEvent(a)))
        assert abs(amplitudes_from_schedule(s).total() - 1) < 1e-12
