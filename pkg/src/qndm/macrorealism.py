"""Leggett-Garg analysis and three-run macrorealism certification.

The LG parameter K = C01 + C12 - C02 is computed twice: from symmetrized
two-time correlators, and as a weighted sum over three-coupling path
amplitudes with

    f(k, j, m, i, l) = (a_i + a_l)(a_j + a_m) + 2 a_k (a_j + a_m - a_i - a_l),
    K = (1/4) sum f P(k, j, m, i, l).

The factor 2 on the second term follows from C12 = (1/2) sum a_k (a_j + a_m) P
and C02 = (1/2) sum a_k (a_i + a_l) P; without it the two routes disagree.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constants import DEFAULT_CHI, DEFAULT_OFFSETS, TOL
from .core import DensityState, SpectralObservable, UnitaryOp, evolve
from .errors import NumericalError, ValidationError
from .protocol import CouplingEvent, PhaseInsertion, ProtocolSchedule, char_fn_exact, shot_generator
from .quasiprob import (
    PathAmplitudeSet,
    QuasiProbDistribution,
    amplitudes_3pt,
    amplitudes_from_schedule,
    collapse,
)

__all__ = [
    "LGResult",
    "RunRecord",
    "CertificationVerdict",
    "lg_correlator",
    "lg_parameter",
    "lg_weights",
    "k_q2_closed_form",
    "k_from_classical_joint",
    "certification_schedules",
    "certify_mr",
    "coherence_oracle",
    "coherence_profile",
]


def _require_binary(A: SpectralObservable):
    if not A.is_binary():
        raise ValidationError(f"observable must have exactly the two outcomes -1 and +1, got {A.eigenvalues}")


@dataclass(frozen=True)
class LGResult:
    """Correlators, K and its split by path class.

    K_cl collects (m = j, l = i) paths, K_q1 (m = j, l != i) and K_q2
    (m != j, l = i). Paths with m != j and l != i contribute nothing for a
    binary observable; ``K_cross`` keeps their (vanishing) sum.
    """

    C01: float
    C12: float
    C02: float
    K: float
    K_cl: float
    K_q1: float
    K_q2: float
    K_cross: float = 0.0

    def __post_init__(self):
        if abs(self.K - (self.C01 + self.C12 - self.C02)) > 1e-10:
            raise NumericalError("K differs from C01 + C12 - C02")
        if abs(self.K - (self.K_cl + self.K_q1 + self.K_q2)) > 1e-9:
            raise NumericalError("K differs from K_cl + K_q1 + K_q2")
        if not (-3.0 - 1e-9 <= self.K_cl <= 1.0 + 1e-9):
            raise NumericalError(f"K_cl = {self.K_cl} outside [-3, 1]")

    @property
    def violates_lgi(self) -> bool:
        return self.K > 1.0 + 1e-10 or self.K < -3.0 - 1e-10


def lg_correlator(rho0: DensityState, U_0i: UnitaryOp, U_ij: UnitaryOp, A: SpectralObservable) -> float:
    """(1/2) Tr[{A_H(t_i), A_H(t_j)} rho0] for Heisenberg-picture A."""
    _require_binary(A)
    u_i = U_0i.matrix
    u_j = U_ij.matrix @ u_i
    a_i = u_i.conj().T @ A.matrix @ u_i
    a_j = u_j.conj().T @ A.matrix @ u_j
    c = 0.5 * np.trace((a_i @ a_j + a_j @ a_i) @ rho0.matrix)
    if abs(c.imag) > 1e-12:
        raise NumericalError(f"correlator has imaginary part {c.imag:.3e}")
    return float(c.real)


def lg_weights(aset: PathAmplitudeSet) -> np.ndarray:
    """f(k, j, m, i, l) / 4 for every row of a three-coupling set."""
    a = np.asarray(aset.observable.eigenvalues)
    k, j, m, i, l = aset.indices.T
    f = (a[i] + a[l]) * (a[j] + a[m]) + 2.0 * a[k] * (a[j] + a[m] - a[i] - a[l])
    return 0.25 * f


def k_q2_closed_form(aset: PathAmplitudeSet, j: int = 0) -> float:
    """-4 sum_k Re P(k, j, jbar, k, k) for a binary observable, jbar the other outcome."""
    if aset.observable.n_outcomes != 2:
        raise ValidationError("closed form needs a two-outcome observable")
    amp = aset.as_array()
    jb = 1 - j
    return float(-4.0 * sum(amp[k, j, jb, k, k].real for k in range(2)))


def k_from_classical_joint(aset: PathAmplitudeSet) -> float:
    """K = 1 - 4 [p(+1, -1, +1) + p(-1, +1, -1)] from the classical joint p(a_i, a_j, a_k)."""
    amp = aset.as_array()
    vals = aset.observable.eigenvalues
    up = int(np.flatnonzero(vals > 0)[0])
    dn = int(np.flatnonzero(vals < 0)[0])

    def p(i, j, k):
        return amp[k, j, j, i, i].real

    return float(1.0 - 4.0 * (p(up, dn, up) + p(dn, up, dn)))


def lg_parameter(rho0: DensityState, U1: UnitaryOp, U2: UnitaryOp, A: SpectralObservable) -> LGResult:
    _require_binary(A)
    c01 = lg_correlator(rho0, UnitaryOp.identity(A.dim), U1, A)
    c12 = lg_correlator(rho0, U1, U2, A)
    c02 = lg_correlator(rho0, UnitaryOp.identity(A.dim), U2 @ U1, A)
    k_corr = c01 + c12 - c02

    aset = amplitudes_3pt(rho0, U1, U2, A)
    terms = lg_weights(aset) * aset.values
    k_amp = terms.sum()
    if abs(k_amp.imag) > 1e-10:
        raise NumericalError(f"path-sum K has imaginary part {k_amp.imag:.3e}")
    if abs(k_amp.real - k_corr) > TOL.route_agreement:
        raise NumericalError(f"correlator route K = {k_corr!r} and path route K = {k_amp.real!r} disagree")
    k, j, m, i, l = aset.indices.T
    same_j, same_i = j == m, i == l

    def part(mask):
        return float(terms[mask].sum().real)

    cross = part(~same_j & ~same_i)
    if abs(cross) > 1e-10:
        raise NumericalError(f"paths with m != j and l != i contribute {cross:.3e}")
    return LGResult(
        C01=c01, C12=c12, C02=c02, K=k_corr,
        K_cl=part(same_j & same_i),
        K_q1=part(same_j & ~same_i),
        K_q2=part(~same_j & same_i),
        K_cross=cross,
    )


# -- certification ------------------------------------------------------------------


@dataclass(frozen=True)
class RunRecord:
    run: int
    chi: float
    lambda_offsets: tuple
    negativity: float
    min_weight: float
    g_check: float


@dataclass(frozen=True)
class CertificationVerdict:
    runs: tuple
    violates_mr: bool
    threshold: float
    lambda_base: float = 1.0

    def __post_init__(self):
        if len(self.runs) != 3:
            raise ValidationError("a verdict needs exactly three runs")
        expected = any(r.negativity < -self.threshold for r in self.runs)
        if bool(self.violates_mr) != expected:
            raise ValidationError("violates_mr does not match the run negativities")

    def to_dict(self) -> dict:
        d = asdict(self)
        for r in d["runs"]:
            r["lambda_offsets"] = list(r["lambda_offsets"])
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "CertificationVerdict":
        runs = tuple(RunRecord(**{**r, "lambda_offsets": tuple(r["lambda_offsets"])}) for r in d["runs"])
        return cls(runs, bool(d["violates_mr"]), float(d["threshold"]), float(d.get("lambda_base", 1.0)))


def certification_schedules(
    rho0: DensityState,
    U1: UnitaryOp,
    U2: UnitaryOp,
    A: SpectralObservable,
    deltas: Sequence[float] = DEFAULT_OFFSETS,
    chi: float = DEFAULT_CHI,
) -> list:
    """The three schedules: plain, phase before U1, phase before the second coupling.

    The couplings carry relative shifts (0, delta, delta') so classical and
    quantum paths land on distinct Delta values.
    """
    d1, d2 = deltas
    c0, c1, c2 = CouplingEvent(A, 1, 0.0), CouplingEvent(A, 1, d1), CouplingEvent(A, 1, d2)
    ph = PhaseInsertion(A, chi)
    return [
        ProtocolSchedule(rho0, (c0, U1, c1, U2, c2)),
        ProtocolSchedule(rho0, (c0, ph, U1, c1, U2, c2)),
        ProtocolSchedule(rho0, (c0, U1, ph, c1, U2, c2)),
    ]


def certify_mr(
    rho0: DensityState,
    U1: UnitaryOp,
    U2: UnitaryOp,
    A: SpectralObservable,
    lambda_base: float = 1.0,
    deltas: Sequence[float] = DEFAULT_OFFSETS,
    chi: Optional[float] = DEFAULT_CHI,
    threshold: float = TOL.exact_negativity,
    random_chi: bool = False,
    seed: int = 0,
) -> CertificationVerdict:
    """Three-run certification from exact path amplitudes.

    Each run's distribution is also checked against the schedule's exact
    quasi-characteristic function at ``lambda_base`` (``g_check``). With
    ``random_chi`` the phase is drawn uniformly from (0, pi) using ``seed``.
    """
    if threshold <= 0:
        raise ValidationError("threshold must be positive")
    if A.n_outcomes < 2:
        raise ValidationError("observable has a single eigenvalue; there is nothing to certify")
    if random_chi:
        chi = float(shot_generator(seed).uniform(0.0, np.pi))
        while chi == 0.0:
            chi = float(shot_generator(seed, 1).uniform(0.0, np.pi))
    if chi is None or not np.isfinite(chi) or np.isclose(np.mod(chi, np.pi), 0.0, atol=1e-12) \
            or np.isclose(np.mod(chi, np.pi), np.pi, atol=1e-12):
        raise ValidationError(f"chi must not be a multiple of pi, got {chi}")
    deltas = tuple(float(d) for d in deltas)
    runs = []
    for n, sched in enumerate(certification_schedules(rho0, U1, U2, A, deltas, chi), start=1):
        aset = amplitudes_from_schedule(sched)
        dist = collapse(aset)
        g_err = abs(char_fn_exact(sched, lambda_base) - aset.fourier(lambda_base))
        if g_err > 1e-9:
            raise NumericalError(f"run {n}: path sum and quasi-characteristic function disagree ({g_err:.3e})")
        runs.append(RunRecord(n, 0.0 if n == 1 else float(chi), deltas, dist.negativity, dist.min_weight, g_err))
    violates = any(r.negativity < -threshold for r in runs)
    return CertificationVerdict(tuple(runs), violates, float(threshold), float(lambda_base))


def coherence_profile(rho0: DensityState, U1: UnitaryOp, U2: UnitaryOp, A: SpectralObservable) -> tuple:
    """Largest off-block element of rho(t0), rho(t1), rho(t2) in A's eigenspaces."""
    r1 = evolve(rho0, U1)
    r2 = evolve(r1, U2)
    return tuple(A.block_coherence(r) for r in (rho0, r1, r2))


def coherence_oracle(rho0: DensityState, U1: UnitaryOp, U2: UnitaryOp, A: SpectralObservable,
                     tol: float = TOL.coherence) -> bool:
    return any(c > tol for c in coherence_profile(rho0, U1, U2, A))
