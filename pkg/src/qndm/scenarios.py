"""Ready-made experiments: work statistics, the LG qubit, damping and the noise study."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constants import CSV_FLOAT_FORMAT, TOL
from .core import (
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    DensityState,
    KrausChannel,
    SpectralObservable,
    UnitaryOp,
    amplitude_damping,
    as_cmatrix,
    depolarizing,
    hermitian_eigendecompose,
)
from .errors import ValidationError
from .macrorealism import LGResult, lg_parameter
from .protocol import (
    CouplingEvent,
    DetectorModel,
    ProtocolSchedule,
    CharFnGrid,
    detector_state,
    estimate_many,
    lambda_grid as make_lambda_grid,
    reconstruct_distribution,
    sample_char_fn_grid,
    shot_generator,
)
from .quasiprob import (
    QuasiProbDistribution,
    TPMDistribution,
    amplitudes_3pt,
    amplitudes_from_schedule,
    apply_steps,
    collapse,
    tpm_distribution,
)

__all__ = [
    "encode_matrix",
    "decode_matrix",
    "WorkScenario",
    "cyclic_qubit_work",
    "work_schedule",
    "work_quasiprob",
    "work_tpm",
    "LGQubitScenario",
    "LGSweepRow",
    "lg_sweep",
    "lg_closed_form",
    "DampingScenario",
    "damping_schedule",
    "damping_experiment",
    "damping_char_fn_isometry",
    "shots_distribution",
    "NoiseConfig",
    "NoisyPoint",
    "NoisyComparisonReport",
    "noisy_lg_vs_qndm",
    "lg_shot_correlators",
    "resource_count",
]


def encode_matrix(m) -> list:
    """Nested lists of [re, im] pairs."""
    a = as_cmatrix(m, square=False)
    return [[[float(z.real), float(z.imag)] for z in row] for row in a]


def decode_matrix(obj) -> np.ndarray:
    """Inverse of ``encode_matrix``; plain real entries are accepted too."""
    try:
        rows = []
        for row in obj:
            out = []
            for z in row:
                if isinstance(z, (list, tuple)):
                    if len(z) != 2:
                        raise ValueError("complex entries are [re, im] pairs")
                    out.append(complex(float(z[0]), float(z[1])))
                elif isinstance(z, dict):
                    out.append(complex(float(z.get("re", 0.0)), float(z.get("im", 0.0))))
                else:
                    out.append(complex(float(z)))
            rows.append(out)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"cannot decode matrix: {exc}") from None
    return as_cmatrix(rows)


# -- work ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorkScenario:
    H0: SpectralObservable
    HT: SpectralObservable
    U: UnitaryOp
    rho0: DensityState

    def __post_init__(self):
        dims = {self.H0.dim, self.HT.dim, self.U.dim, self.rho0.dim}
        if len(dims) != 1:
            raise ValidationError(f"inconsistent dimensions {sorted(dims)}")

    def to_dict(self) -> dict:
        return {
            "H0": encode_matrix(self.H0.matrix),
            "HT": encode_matrix(self.HT.matrix),
            "U": encode_matrix(self.U.matrix),
            "rho0": encode_matrix(self.rho0.matrix),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorkScenario":
        try:
            return cls(
                hermitian_eigendecompose(decode_matrix(d["H0"])),
                hermitian_eigendecompose(decode_matrix(d["HT"])),
                UnitaryOp(decode_matrix(d["U"])),
                DensityState(decode_matrix(d["rho0"])),
            )
        except KeyError as exc:
            raise ValidationError(f"work scenario is missing {exc}") from None

    def mean_work(self) -> float:
        """Tr[(U^dag H(T) U - H(0)) rho0]."""
        u = self.U.matrix
        w = u.conj().T @ self.HT.matrix @ u - self.H0.matrix
        return float(np.real(np.trace(w @ self.rho0.matrix)))


def cyclic_qubit_work(omega: float = 1.0, theta: float = np.pi / 2, psi=(1.0, 1.0)) -> WorkScenario:
    """H(0) = H(T) = omega sigma_z / 2 with a real drive exp(-i theta sigma_y / 2) in between.

    A real rotation keeps the interference term real, so a real superposition
    such as |+> puts nonzero weight on +-omega/2.
    """
    h = hermitian_eigendecompose(0.5 * omega * PAULI_Z)
    return WorkScenario(h, h, UnitaryOp.from_hamiltonian(0.5 * PAULI_Y, theta), DensityState.pure(psi))


def work_schedule(s: WorkScenario) -> ProtocolSchedule:
    """Coupling to H(0) with flipped sign, drive, coupling to H(T)."""
    return ProtocolSchedule(s.rho0, (CouplingEvent(s.H0, -1), s.U, CouplingEvent(s.HT, 1)))


def work_quasiprob(s: WorkScenario, merge_tol: float = TOL.merge) -> QuasiProbDistribution:
    """Weights on Delta = eps_j(T) - (eps_i(0) + eps_l(0)) / 2."""
    return collapse(amplitudes_from_schedule(work_schedule(s)), merge_tol)


def work_tpm(s: WorkScenario) -> TPMDistribution:
    return tpm_distribution(s.rho0, s.U, s.H0, s.HT)


# -- Leggett-Garg qubit -------------------------------------------------------------

_LG_PSI = np.array([1.0, 1.0j]) / np.sqrt(2.0)


@dataclass(frozen=True)
class LGQubitScenario:
    """Qubit in (|0> + i|1>)/sqrt2 precessing under omega sigma_x / 2, measured in sigma_z."""

    omega_tau: float

    def __post_init__(self):
        if not (0.0 <= self.omega_tau <= 2.0 * np.pi + 1e-12):
            raise ValidationError("omega_tau must lie in [0, 2 pi]")

    @property
    def rho0(self) -> DensityState:
        return DensityState.pure(_LG_PSI)

    @property
    def observable(self) -> SpectralObservable:
        return hermitian_eigendecompose(PAULI_Z)

    @property
    def unitary(self) -> UnitaryOp:
        x = 0.5 * self.omega_tau
        return UnitaryOp(np.cos(x) * np.eye(2) - 1j * np.sin(x) * PAULI_X)

    def schedule(self, offsets: Sequence[float] = (0.0, 0.0, 0.0)) -> ProtocolSchedule:
        a, u = self.observable, self.unitary
        c = [CouplingEvent(a, 1, d) for d in offsets]
        return ProtocolSchedule(self.rho0, (c[0], u, c[1], u, c[2]))

    def lg_result(self) -> LGResult:
        return lg_parameter(self.rho0, self.unitary, self.unitary, self.observable)

    def distribution(self) -> QuasiProbDistribution:
        return collapse(amplitudes_3pt(self.rho0, self.unitary, self.unitary, self.observable))

    def to_dict(self) -> dict:
        return {"omega_tau": float(self.omega_tau)}

    @classmethod
    def from_dict(cls, d: dict) -> "LGQubitScenario":
        return cls(float(d["omega_tau"]))


def lg_closed_form(omega_tau) -> np.ndarray:
    x = np.asarray(omega_tau, dtype=float)
    return 2.0 * np.cos(x) - np.cos(2.0 * x)


@dataclass(frozen=True)
class LGSweepRow:
    omega_tau: float
    result: LGResult
    K_closed: float

    @property
    def violation(self) -> bool:
        return self.result.K > 1.0 + 1e-10


def lg_sweep(omega_tau_grid) -> list:
    rows = []
    for x in np.asarray(omega_tau_grid, dtype=float):
        res = LGQubitScenario(float(x)).lg_result()
        rows.append(LGSweepRow(float(x), res, float(lg_closed_form(x))))
    return rows


# -- damping ------------------------------------------------------------------------


@dataclass(frozen=True)
class DampingScenario:
    """Qubit cos(theta/2)|0> + e^{i phi} sin(theta/2)|1> measured in H(0) = eps sigma_x/2, H(T) = eps sigma_z/2.

    Between the couplings: U_x = exp(-i alpha sigma_x), damping in the sigma_x
    eigenbasis, U_z = exp(-i beta sigma_z), damping in the sigma_z eigenbasis.
    Damping relaxes the higher-energy eigenvector into the lower one.
    """

    theta: float = 0.7
    phi: float = 1.2
    alpha: float = 1.0
    beta: float = 0.5
    p: float = 0.0
    epsilon: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"damping probability {self.p} outside [0, 1]")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")

    def with_p(self, p: float) -> "DampingScenario":
        return DampingScenario(self.theta, self.phi, self.alpha, self.beta, p, self.epsilon)

    @property
    def psi0(self) -> np.ndarray:
        return np.array([np.cos(self.theta / 2), np.exp(1j * self.phi) * np.sin(self.theta / 2)])

    @property
    def H0(self) -> SpectralObservable:
        return hermitian_eigendecompose(0.5 * self.epsilon * PAULI_X)

    @property
    def HT(self) -> SpectralObservable:
        return hermitian_eigendecompose(0.5 * self.epsilon * PAULI_Z)

    def unitaries(self):
        ux = np.cos(self.alpha) * np.eye(2) - 1j * np.sin(self.alpha) * PAULI_X
        uz = np.cos(self.beta) * np.eye(2) - 1j * np.sin(self.beta) * PAULI_Z
        return UnitaryOp(ux), UnitaryOp(uz)

    def damping_vectors(self, h: SpectralObservable):
        """(ground, excited) eigenvectors of a non-degenerate qubit Hamiltonian."""
        vecs = []
        for proj in h.projectors:
            col = np.argmax(np.linalg.norm(proj, axis=0))
            v = proj[:, col]
            vecs.append(v / np.linalg.norm(v))
        return vecs[0], vecs[-1]

    def channels(self):
        gx, ex = self.damping_vectors(self.H0)
        gz, ez = self.damping_vectors(self.HT)
        return amplitude_damping(self.p, gx, ex), amplitude_damping(self.p, gz, ez)

    def evolution_steps(self) -> tuple:
        ux, uz = self.unitaries()
        rx, rz = self.channels()
        return (ux, rx, uz, rz)

    @property
    def support(self) -> np.ndarray:
        return self.epsilon * np.array([-1.0, -0.5, 0.0, 0.5, 1.0])

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("theta", "phi", "alpha", "beta", "p", "epsilon")}

    @classmethod
    def from_dict(cls, d: dict) -> "DampingScenario":
        return cls(**{k: float(v) for k, v in d.items()})


def damping_schedule(s: DampingScenario) -> ProtocolSchedule:
    return ProtocolSchedule(
        DensityState.pure(s.psi0),
        (CouplingEvent(s.H0, -1), *s.evolution_steps(), CouplingEvent(s.HT, 1)),
    )


def _damping_unitary(p: float, ground: np.ndarray, excited: np.ndarray) -> np.ndarray:
    """Unitary on system (x) environment extending |e,0> -> sqrt(1-p)|e,0> + sqrt(p)|g,1>."""
    e0, e1 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    ins = [np.kron(ground, e0), np.kron(excited, e0), np.kron(ground, e1), np.kron(excited, e1)]
    c, s = np.sqrt(1.0 - p), np.sqrt(p)
    outs = [ins[0], c * ins[1] + s * ins[2], -s * ins[1] + c * ins[2], ins[3]]
    return np.column_stack(outs) @ np.column_stack(ins).conj().T


def _apply_local(psi: np.ndarray, u: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Apply ``u`` to the tensor factors ``axes`` of a state of shape (2,)*n."""
    k = len(axes)
    t = u.reshape((2,) * (2 * k))
    out = np.tensordot(t, psi, axes=(list(range(k, 2 * k)), list(axes)))
    return np.moveaxis(out, list(range(k)), list(axes))


def damping_char_fn_isometry(s: DampingScenario, lam: float) -> complex:
    """G(lambda) from a pure state on system (x) detector (x) env1 (x) env2.

    Each damping event entangles the system with its own environment qubit,
    starting in |0>; the environments and the system are traced at the end.
    """
    d = DetectorModel()
    psi = np.einsum("a,b,c,d->abcd", s.psi0, d.initial, [1.0, 0.0], [1.0, 0.0]).astype(complex)
    pz = d.p_eigenvalues
    ux, uz = s.unitaries()

    def couple(state, h: SpectralObservable, strength: float):
        theta = 0.5 * strength * lam
        u = sum(np.kron(proj, np.diag(np.exp(1j * theta * a * pz))) for a, proj in zip(h.eigenvalues, h.projectors))
        return _apply_local(state, u, (0, 1))

    psi = couple(psi, s.H0, -1.0)
    psi = _apply_local(psi, ux.matrix, (0,))
    psi = _apply_local(psi, _damping_unitary(s.p, *s.damping_vectors(s.H0)), (0, 2))
    psi = _apply_local(psi, uz.matrix, (0,))
    psi = _apply_local(psi, _damping_unitary(s.p, *s.damping_vectors(s.HT)), (0, 3))
    psi = couple(psi, s.HT, 1.0)
    r = np.einsum("adef,bdef->ab", psi.transpose(1, 0, 2, 3), psi.transpose(1, 0, 2, 3).conj())
    return complex(r[0, 1] / d.initial_matrix[0, 1])


def shots_distribution(
    sched: ProtocolSchedule,
    exact: QuasiProbDistribution,
    n_shots: int,
    seed: int,
    lambdas=None,
) -> QuasiProbDistribution:
    """Finite-shot counterpart of ``exact``: sample G through the detector, fit weights on its support.

    The fitted weights carry shot noise, so no normalization is enforced.
    """
    if n_shots is None or n_shots < 1:
        raise ValidationError("shots mode needs n_shots >= 1")
    lam = make_lambda_grid(100.0, 0.1) if lambdas is None else np.asarray(lambdas, dtype=float)
    grid = sample_char_fn_grid(sched, DetectorModel(), lam, n_shots, seed)
    lo, hi = float(exact.deltas.min()), float(exact.deltas.max())
    pad = 0.1 * max(hi - lo, 1.0)
    step = float(lam[1] - lam[0])
    if hi - lo + 2 * pad >= 2 * np.pi / step:
        pad = 0.45 * (2 * np.pi / step - (hi - lo))
    dg = {"min": lo - pad, "max": hi + pad, "step": min(0.01, (hi - lo + 2 * pad) / 200)}
    rec = reconstruct_distribution(grid, dg, exact.deltas)
    return QuasiProbDistribution(exact.deltas, rec.support_weights, exact.tags, exact.merge_tol, norm=None)


def damping_experiment(
    s: DampingScenario,
    mode: str = "exact",
    n_shots: Optional[int] = None,
    seed: int = 0,
    lambda_grid=None,
) -> QuasiProbDistribution:
    """Delta-U distribution of the damping experiment.

    ``exact`` enumerates path amplitudes; ``shots`` samples G on
    ``lambda_grid`` (default 0..100 in steps of 0.1) and fits the known
    support, see ``shots_distribution``.
    """
    sched = damping_schedule(s)
    exact = collapse(amplitudes_from_schedule(sched))
    if mode == "exact":
        return exact
    if mode != "shots":
        raise ValidationError(f"mode must be 'exact' or 'shots', got {mode!r}")
    return shots_distribution(sched, exact, n_shots, seed, lambda_grid)


# -- noise study --------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseConfig:
    depolarizing_per_gate: float = 0.0
    readout_flip: float = 0.0

    def __post_init__(self):
        for name in ("depolarizing_per_gate", "readout_flip"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ValidationError(f"{name} must lie in [0, 1), got {v}")

    def to_dict(self) -> dict:
        return {"depolarizing_per_gate": self.depolarizing_per_gate, "readout_flip": self.readout_flip}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        return cls(float(d.get("depolarizing_per_gate", 0.0)), float(d.get("readout_flip", 0.0)))


def _lg_joint(rho: np.ndarray, pre: list, mid: list, proj, noise_ch: Optional[KrausChannel]) -> np.ndarray:
    """p(a, b) for projective A measurements separated by the gate list ``mid``."""

    def run(x, gates):
        for g in gates:
            x = g.matrix @ x @ g.matrix.conj().T
            if noise_ch is not None:
                x = noise_ch.apply_matrix(x)
        return x

    x = run(rho, pre)
    out = np.empty((2, 2))
    for a, pa in enumerate(proj):
        y = run(pa @ x @ pa, mid)
        for b, pb in enumerate(proj):
            out[a, b] = max(float(np.real(np.trace(pb @ y))), 0.0)
    return out / out.sum()


def lg_shot_correlators(omega_tau: float, n_shots: int, noise: NoiseConfig, rng: np.random.Generator) -> tuple:
    """Sampled (C01, C12, C02) from sequential projective sigma_z measurements.

    Each correlator uses its own ``n_shots`` runs. A known readout flip q is
    corrected by dividing by (1 - 2q)^2.
    """
    sc = LGQubitScenario(omega_tau)
    a = sc.observable
    u = sc.unitary
    ch = depolarizing(2, noise.depolarizing_per_gate) if noise.depolarizing_per_gate > 0 else None
    q = noise.readout_flip
    flip = np.array([[1 - q, q], [q, 1 - q]])
    vals = a.eigenvalues
    rho = sc.rho0.matrix
    out = []
    for pre, mid in (([], [u]), ([u], [u]), ([], [u, u])):
        p = _lg_joint(rho, pre, mid, a.projectors, ch)
        p = flip.T @ p @ flip
        counts = rng.multinomial(n_shots, p.reshape(-1) / p.sum()).reshape(2, 2)
        c = float(np.einsum("a,b,ab->", vals, vals, counts)) / n_shots
        out.append(c / (1.0 - 2.0 * q) ** 2)
    return tuple(out)


@dataclass(frozen=True)
class NoisyPoint:
    omega_tau: float
    K_exact: float
    K_mean: float
    K_std: float
    violation_flag: bool
    qndm_min_exact: float
    qndm_min_mean: float
    qndm_min_std: float
    negativity_flag: bool


@dataclass(frozen=True)
class NoisyComparisonReport:
    points: tuple
    n_lg: int
    n_qndm: int
    noise: NoiseConfig
    n_seeds: int

    @property
    def lgi_fraction(self) -> float:
        return float(np.mean([p.violation_flag for p in self.points]))

    @property
    def qndm_fraction(self) -> float:
        return float(np.mean([p.negativity_flag for p in self.points]))

    @property
    def ideal_lgi_fraction(self) -> float:
        return float(np.mean([p.K_exact > 1.0 + 1e-10 for p in self.points]))

    COLUMNS = ("omega_tau", "K_exact", "K_mean", "K_std", "violation_flag",
               "qndm_min_exact", "qndm_min_mean", "qndm_min_std", "negativity_flag")

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.COLUMNS)
        for p in self.points:
            row = []
            for c in self.COLUMNS:
                v = getattr(p, c)
                row.append(str(int(v)) if isinstance(v, (bool, np.bool_)) else CSV_FLOAT_FORMAT.format(v))
            wr.writerow(row)
        return buf.getvalue()


def noisy_lg_vs_qndm(
    n_shots_lg: int = 10_000,
    n_shots_qndm: int = 100,
    lambda_grid=None,
    noise: NoiseConfig = NoiseConfig(),
    seeds: Sequence[int] = tuple(range(20)),
    omega_tau_grid=None,
    threshold: float = TOL.reconstructed_negativity,
    qndm: bool = True,
) -> NoisyComparisonReport:
    """LG correlator estimates versus reconstructed QNDM distributions under shot and gate noise.

    The default grid is 0..2 pi in steps of pi/100. The LG flag is
    ``K_mean - K_std > 1``. The QNDM distribution (three unshifted couplings,
    support -3..3) is reconstructed per seed by a least-squares fit on the
    known support; its flag is ``min_mean + min_std < -threshold``. With
    ``qndm=False`` only the LG half runs and the QNDM columns hold NaN.
    """
    lam = make_lambda_grid(100.0, 1.0) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    grid_x = np.linspace(0.0, 2.0 * np.pi, 201) if omega_tau_grid is None else np.asarray(omega_tau_grid, dtype=float)
    seeds = list(seeds)
    if not seeds:
        raise ValidationError("need at least one seed")
    det = DetectorModel()
    support = np.arange(-3.0, 4.0)
    dg = {"min": -3.1, "max": 3.1, "step": 0.02}
    measured = lam > 0.0

    def spread(v):
        return float(np.mean(v)), float(np.std(v, ddof=1)) if len(v) > 1 else 0.0

    points = []
    for gi, x in enumerate(grid_x):
        sc = LGQubitScenario(float(x))
        k_exact = float(lg_closed_form(x))
        ks = []
        for sd in seeds:
            c01, c12, c02 = lg_shot_correlators(float(x), n_shots_lg, noise, shot_generator(sd, gi, 0))
            ks.append(c01 + c12 - c02)
        km, ksd = spread(ks)
        if qndm:
            exact_min = sc.distribution().min_weight
            sched = sc.schedule()
            states = np.array([detector_state(sched, det, v, noise.depolarizing_per_gate) for v in lam[measured]])
            mins = []
            for sd in seeds:
                vals = np.ones(lam.size, dtype=complex)
                vals[measured] = estimate_many(states, n_shots_qndm, shot_generator(sd, gi, 1), noise.readout_flip)
                rec = reconstruct_distribution(CharFnGrid(lam, vals, n_shots=n_shots_qndm), dg, support)
                mins.append(float(rec.support_weights.min()))
            mm, msd = spread(mins)
            flag = mm + msd < -threshold
        else:
            exact_min = mm = msd = float("nan")
            flag = False
        points.append(NoisyPoint(float(x), k_exact, km, ksd, km - ksd > 1.0, exact_min, mm, msd, flag))
    n_lambda = int(np.count_nonzero(measured))
    return NoisyComparisonReport(tuple(points), resource_count("lg", n_shots_lg),
                                 resource_count("qndm", n_shots_qndm, n_lambda), noise, len(seeds))


def resource_count(kind: str, n_shots: int, n_lambda: Optional[int] = None) -> int:
    """Total experimental runs: 3 n_shots for LG, 2 n_lambda n_shots for QNDM."""
    if n_shots < 1:
        raise ValidationError("n_shots must be positive")
    kind = kind.lower()
    if kind == "lg":
        return 3 * n_shots
    if kind == "qndm":
        if n_lambda is None or n_lambda < 1:
            raise ValidationError("QNDM count needs a positive n_lambda")
        return 2 * n_lambda * n_shots
    raise ValidationError(f"unknown protocol kind {kind!r}")
