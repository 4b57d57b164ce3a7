"""Path amplitudes, quasi-probability distributions and their reductions.

For a schedule with couplings to observables A (first), B (second) and C
(third, optional), the path amplitudes are

    P(j, i, l)       = Tr[ Pi^B_j  Phi1( Pi^A_i rho Pi^A_l ) ]
    P(k, j, m, i, l) = Tr[ Pi^C_k  Phi2( Pi^B_j Phi1( Pi^A_i rho Pi^A_l ) Pi^B_m ) ]

where Phi1, Phi2 are the maps (unitaries, channels, phase insertions) between
couplings and rho is the initial state after any steps preceding the first
coupling. Each amplitude sits at

    Delta = c_last * b_last + sum over earlier couplings of c * (a_left + a_right) / 2

with c the signed, offset-shifted coupling strength.
"""

from __future__ import annotations

import csv
import io
import itertools
import os
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .constants import CSV_FLOAT_FORMAT, TOL
from .core import DensityState, KrausChannel, SpectralObservable, UnitaryOp
from .errors import NumericalError, ValidationError
from .protocol import CouplingEvent, PhaseInsertion, ProtocolSchedule

__all__ = [
    "PathAmplitude",
    "PathAmplitudeSet",
    "QuasiProbDistribution",
    "TPMDistribution",
    "amplitudes_from_schedule",
    "amplitudes_2pt",
    "amplitudes_3pt",
    "collapse",
    "split_classical_quantum",
    "tpm_distribution",
    "nsit_marginal",
    "kirkwood_dirac_2pt",
    "apply_steps",
    "as_steps",
]

TAGS = ("classical", "quantum", "mixed")


def as_steps(dyn) -> tuple:
    """Normalize a unitary, channel, phase insertion or sequence of them to a tuple."""
    if dyn is None:
        return ()
    if isinstance(dyn, (UnitaryOp, KrausChannel, PhaseInsertion)):
        return (dyn,)
    steps = tuple(dyn)
    for st in steps:
        if not isinstance(st, (UnitaryOp, KrausChannel, PhaseInsertion)):
            raise ValidationError(f"unsupported dynamics step {type(st).__name__}")
    return steps


def apply_steps(steps: Iterable, x: np.ndarray) -> np.ndarray:
    for st in steps:
        if isinstance(st, UnitaryOp):
            x = st.matrix @ x @ st.matrix.conj().T
        elif isinstance(st, KrausChannel):
            x = st.apply_matrix(x)
        elif isinstance(st, PhaseInsertion):
            u = st.observable.phase(st.chi)
            x = u @ x @ u.conj().T
        else:
            raise ValidationError(f"unexpected step {type(st).__name__}")
    return x


@dataclass(frozen=True)
class PathAmplitude:
    indices: tuple
    amplitude: complex
    delta: float


@dataclass(frozen=True)
class PathAmplitudeSet:
    """All path amplitudes of a two- or three-coupling schedule.

    ``indices`` rows are ordered latest outcome first: (j, i, l) or (k, j, m, i, l).
    ``observables`` and ``strengths`` are listed in time order.
    """

    scheme: str
    indices: np.ndarray
    values: np.ndarray
    deltas: np.ndarray
    observables: tuple
    strengths: tuple

    def __post_init__(self):
        n_idx = {"2pt": 3, "3pt": 5}.get(self.scheme)
        if n_idx is None:
            raise ValidationError(f"scheme must be '2pt' or '3pt', got {self.scheme!r}")
        idx = np.asarray(self.indices, dtype=int)
        if idx.ndim != 2 or idx.shape[1] != n_idx:
            raise ValidationError("index table has the wrong shape")
        expected = int(np.prod([o.n_outcomes ** (1 if t == len(self.observables) - 1 else 2)
                                for t, o in enumerate(self.observables)]))
        if idx.shape[0] != expected:
            raise ValidationError(f"expected {expected} amplitudes, got {idx.shape[0]}")
        total = complex(np.sum(self.values))
        if abs(total - 1.0) > TOL.route_agreement:
            raise NumericalError(f"amplitudes sum to {total}, not 1")
        recomputed = _deltas_for(idx, self.observables, self.strengths)
        if np.max(np.abs(recomputed - np.asarray(self.deltas))) > 1e-12:
            raise ValidationError("deltas do not match the index table")
        for name in ("indices", "values", "deltas"):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def observable(self) -> SpectralObservable:
        return self.observables[0]

    @property
    def amplitudes(self) -> list:
        return [PathAmplitude(tuple(int(v) for v in row), complex(a), float(d))
                for row, a, d in zip(self.indices, self.values, self.deltas)]

    def classical_mask(self) -> np.ndarray:
        idx = self.indices
        if self.scheme == "2pt":
            return idx[:, 2] == idx[:, 1]
        return (idx[:, 4] == idx[:, 3]) & (idx[:, 2] == idx[:, 1])

    def as_array(self) -> np.ndarray:
        """Dense array ``amp[k, j, m, i, l]`` (or ``amp[j, i, l]``)."""
        shape = tuple(int(self.indices[:, c].max()) + 1 for c in range(self.indices.shape[1]))
        out = np.zeros(shape, dtype=complex)
        out[tuple(self.indices.T)] = self.values
        return out

    def fourier(self, lam: float) -> complex:
        return complex(np.sum(self.values * np.exp(1j * lam * self.deltas)))

    def total(self) -> complex:
        return complex(np.sum(self.values))


def _deltas_for(idx: np.ndarray, observables, strengths) -> np.ndarray:
    vals = [np.asarray(o.eigenvalues) for o in observables]
    c = strengths
    if len(observables) == 2:
        j, i, l = idx.T
        return c[1] * vals[1][j] + c[0] * 0.5 * (vals[0][i] + vals[0][l])
    k, j, m, i, l = idx.T
    return c[2] * vals[2][k] + c[1] * 0.5 * (vals[1][j] + vals[1][m]) + c[0] * 0.5 * (vals[0][i] + vals[0][l])


def _split_schedule(s: ProtocolSchedule):
    pre, couplings, segments = [], [], []
    for st in s.steps:
        if isinstance(st, CouplingEvent):
            couplings.append(st)
            segments.append([])
        elif couplings:
            segments[-1].append(st)
        else:
            pre.append(st)
    # steps after the last coupling do not change any amplitude
    return pre, couplings, segments[:-1]


def amplitudes_from_schedule(s: ProtocolSchedule) -> PathAmplitudeSet:
    """Enumerate every path amplitude of a 2- or 3-coupling schedule."""
    pre, couplings, segs = _split_schedule(s)
    if len(couplings) not in (2, 3):
        raise ValidationError("amplitude enumeration supports 2 or 3 couplings")
    rho = apply_steps(pre, np.array(s.initial_state.matrix))
    obs = tuple(c.observable for c in couplings)
    strengths = tuple(c.strength for c in couplings)
    pa = obs[0].projectors
    na = len(pa)
    # branch[i, l] = Phi1(Pi_i rho Pi_l)
    branch = [[apply_steps(segs[0], pa[i] @ rho @ pa[l]) for l in range(na)] for i in range(na)]
    rows, vals = [], []
    if len(couplings) == 2:
        pb = obs[1].projector_stack
        for j, i, l in itertools.product(range(obs[1].n_outcomes), range(na), range(na)):
            rows.append((j, i, l))
            vals.append(np.trace(pb[j] @ branch[i][l]))
        scheme = "2pt"
    else:
        pb = obs[1].projectors
        nb = len(pb)
        pc = obs[2].projector_stack
        nc = len(pc)
        table = np.empty((nc, nb, nb, na, na), dtype=complex)
        for i, l, j, m in itertools.product(range(na), range(na), range(nb), range(nb)):
            z = apply_steps(segs[1], pb[j] @ branch[i][l] @ pb[m])
            table[:, j, m, i, l] = np.einsum("kab,ba->k", pc, z)
        for k, j, m, i, l in itertools.product(range(nc), range(nb), range(nb), range(na), range(na)):
            rows.append((k, j, m, i, l))
            vals.append(table[k, j, m, i, l])
        scheme = "3pt"
    idx = np.array(rows, dtype=int)
    return PathAmplitudeSet(scheme, idx, np.array(vals, dtype=complex), _deltas_for(idx, obs, strengths),
                            obs, strengths)


def _couplings(observables, signs, offsets):
    if len(signs) != len(observables) or len(offsets) != len(observables):
        raise ValidationError("need one sign and one offset per coupling")
    return [CouplingEvent(o, int(s), float(d)) for o, s, d in zip(observables, signs, offsets)]


def amplitudes_2pt(
    rho0: DensityState,
    U1,
    A: SpectralObservable,
    A_final: Optional[SpectralObservable] = None,
    signs: Sequence[int] = (1, 1),
    offsets: Sequence[float] = (0.0, 0.0),
) -> PathAmplitudeSet:
    """P(j, i, l) = Tr[Pi_j U1 Pi_i rho0 Pi_l U1^dag]; ``U1`` may also be a channel or a list of steps."""
    c0, c1 = _couplings((A, A if A_final is None else A_final), signs, offsets)
    s = ProtocolSchedule(rho0, (c0, *as_steps(U1), c1))
    return amplitudes_from_schedule(s)


def amplitudes_3pt(
    rho0: DensityState,
    U1,
    U2,
    A: SpectralObservable,
    signs: Sequence[int] = (1, 1, 1),
    offsets: Sequence[float] = (0.0, 0.0, 0.0),
) -> PathAmplitudeSet:
    """P(k, j, m, i, l) = Tr[Pi_k U2 Pi_j U1 Pi_i rho0 Pi_l U1^dag Pi_m U2^dag]."""
    c0, c1, c2 = _couplings((A, A, A), signs, offsets)
    s = ProtocolSchedule(rho0, (c0, *as_steps(U1), c1, *as_steps(U2), c2))
    return amplitudes_from_schedule(s)


# -- distributions ------------------------------------------------------------------


def _fmt(x: float) -> str:
    return CSV_FLOAT_FORMAT.format(float(x))


@dataclass(frozen=True)
class QuasiProbDistribution:
    """Real weights on distinct support points.

    ``norm`` is the required total weight: 1 for a quasi-probability or a
    classical part, 0 for the quantum part of a split, ``None`` to skip the
    check. ``imag_residues`` keeps the imaginary sum of every merged bin.
    """

    deltas: np.ndarray
    weights: np.ndarray
    tags: tuple
    merge_tol: float = TOL.merge
    norm: Optional[float] = 1.0
    imag_residues: Optional[np.ndarray] = None

    def __post_init__(self):
        d = np.asarray(self.deltas, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        tags = tuple(self.tags)
        if not (d.size == w.size == len(tags)):
            raise ValidationError("deltas, weights and tags must have equal lengths")
        if self.merge_tol <= 0:
            raise ValidationError("merge_tol must be positive")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(w))):
            raise ValidationError("non-finite support point or weight")
        if d.size > 1 and np.any(np.diff(d) <= self.merge_tol):
            raise ValidationError("support points must be increasing and separated by more than merge_tol")
        bad = [t for t in tags if t not in TAGS]
        if bad:
            raise ValidationError(f"unknown class tag {bad[0]!r}")
        if self.norm is not None and abs(w.sum() - self.norm) > TOL.normalization:
            raise NumericalError(f"weights sum to {w.sum():.15g}, expected {self.norm}")
        res = np.zeros(d.size) if self.imag_residues is None else np.asarray(self.imag_residues, dtype=float)
        for name, arr in (("deltas", d), ("weights", w), ("imag_residues", res)):
            arr = np.array(arr, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "tags", tags)

    def __len__(self):
        return self.deltas.size

    @property
    def support(self) -> list:
        return list(zip(self.deltas.tolist(), self.weights.tolist(), self.tags))

    @property
    def negativity(self) -> float:
        """Total negative mass, sum of min(0, w)."""
        return float(np.minimum(self.weights, 0.0).sum())

    @property
    def min_weight(self) -> float:
        return float(self.weights.min()) if self.weights.size else 0.0

    def mean(self) -> float:
        return float(np.dot(self.deltas, self.weights))

    def moment(self, order: int) -> float:
        return float(np.dot(self.deltas**order, self.weights))

    def weight_at(self, delta: float, tol: float = 1e-9) -> float:
        hit = np.abs(self.deltas - delta) <= tol
        return float(self.weights[hit].sum())

    def to_csv(self, path: Union[str, os.PathLike, None] = None, comment: Optional[str] = None) -> str:
        buf = io.StringIO()
        if comment:
            for line in comment.splitlines():
                buf.write(f"# {line}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["delta", "weight", "tag"])
        for d, w, t in zip(self.deltas, self.weights, self.tags):
            wr.writerow([_fmt(d), _fmt(w), t])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source, merge_tol: float = TOL.merge, norm: Optional[float] = 1.0) -> "QuasiProbDistribution":
        """Read rows written by ``to_csv``; ``source`` is a path or the CSV text."""
        if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
            with open(source, newline="") as fh:
                text = fh.read()
        else:
            text = str(source)
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        rows = list(csv.DictReader(lines))
        return cls(
            np.array([float(r["delta"]) for r in rows]),
            np.array([float(r["weight"]) for r in rows]),
            tuple(r["tag"] for r in rows),
            merge_tol,
            norm,
        )


def _bin(deltas: np.ndarray, order: np.ndarray, merge_tol: float) -> list:
    groups = [[order[0]]] if order.size else []
    for pos in order[1:]:
        if deltas[pos] - deltas[groups[-1][-1]] <= merge_tol:
            groups[-1].append(pos)
        else:
            groups.append([pos])
    return groups


def _collapse_arrays(deltas, values, mask, indices, merge_tol, norm):
    if merge_tol <= 0:
        raise ValidationError("merge_tol must be positive")
    # sort by Delta, ties broken by the index tuple, for a reproducible merge order
    keys = [indices[:, c] for c in reversed(range(indices.shape[1]))] + [deltas]
    order = np.lexsort(keys)
    groups = _bin(deltas, order, merge_tol)
    d_out, w_out, t_out, r_out = [], [], [], []
    for g in groups:
        g = np.asarray(g)
        d_out.append(float(np.mean(deltas[g])))
        w_out.append(float(np.sum(values[g].real)))
        r_out.append(float(np.sum(values[g].imag)))
        cl = mask[g]
        t_out.append("classical" if cl.all() else "quantum" if not cl.any() else "mixed")
    total_imag = float(np.sum(values.imag))
    if abs(total_imag) > TOL.imag_residue:
        raise NumericalError(f"imaginary parts do not cancel over the full set ({total_imag:.3e})")
    return QuasiProbDistribution(np.array(d_out), np.array(w_out), tuple(t_out), merge_tol, norm, np.array(r_out))


def collapse(aset: PathAmplitudeSet, merge_tol: float = TOL.merge) -> QuasiProbDistribution:
    """Merge amplitudes with equal Delta into real weights.

    Each bin's imaginary sum is kept in ``imag_residues``; the imaginary parts
    of the whole set must cancel.
    """
    return _collapse_arrays(np.asarray(aset.deltas), np.asarray(aset.values), aset.classical_mask(),
                            aset.indices, merge_tol, 1.0)


def split_classical_quantum(aset: PathAmplitudeSet, merge_tol: float = TOL.merge):
    """Return (classical part, quantum part) from the amplitude-level split."""
    mask = aset.classical_mask()
    d, v, idx = np.asarray(aset.deltas), np.asarray(aset.values), aset.indices
    classical = _collapse_arrays(d[mask], v[mask], mask[mask], idx[mask], merge_tol, 1.0)
    if np.any(classical.weights < -TOL.exact_negativity):
        raise NumericalError("classical part has a negative weight")
    qm = ~mask
    if not qm.any():
        empty = np.array([])
        return classical, QuasiProbDistribution(empty, empty, (), merge_tol, 0.0)
    quantum = _collapse_arrays(d[qm], v[qm], mask[qm], idx[qm], merge_tol, 0.0)
    return classical, quantum


@dataclass(frozen=True)
class TPMDistribution:
    """Two-point measurement statistics: probabilities on distinct outcomes w."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float).reshape(-1)
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if s.shape != p.shape:
            raise ValidationError("support and probs must have equal lengths")
        if np.any(p < 0):
            raise ValidationError("TPM probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise NumericalError(f"TPM probabilities sum to {p.sum():.15g}")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "probs", p)

    def mean(self) -> float:
        return float(np.dot(self.support, self.probs))

    def prob_at(self, w: float, tol: float = 1e-9) -> float:
        return float(self.probs[np.abs(self.support - w) <= tol].sum())


def tpm_distribution(rho0: DensityState, U, H0: SpectralObservable, HT: SpectralObservable,
                     merge_tol: float = TOL.merge) -> TPMDistribution:
    """P(w) = sum over (i, j) with eps_j(T) - eps_i(0) = w of P_i P_{i->j}.

    ``U`` may be a unitary, a channel or a list of steps; for a channel the
    conditional probability is Tr[Pi_j Phi(Pi_i rho Pi_i)] / P_i.
    """
    steps = as_steps(U)
    rho = np.array(rho0.matrix)
    ws, ps, keys = [], [], []
    for i, pi in enumerate(H0.projectors):
        post = apply_steps(steps, pi @ rho @ pi)
        for j, pj in enumerate(HT.projectors):
            ws.append(HT.eigenvalues[j] - H0.eigenvalues[i])
            ps.append(float(np.real(np.trace(pj @ post))))
            keys.append((j, i))
    ws, ps = np.array(ws), np.array(ps)
    # round-off can leave -1e-17 on a zero-probability path
    ps[(ps < 0) & (ps > -1e-12)] = 0.0
    groups = _bin(ws, np.lexsort((np.arange(ws.size), ws)), merge_tol)
    support = np.array([np.mean(ws[g]) for g in groups])
    probs = np.array([ps[g].sum() for g in groups])
    return TPMDistribution(support, probs)


def nsit_marginal(aset: PathAmplitudeSet, time: int, outcome: int) -> float:
    """Single-time marginal from the symmetrized sums over the other indices.

    time 2: sum over tuples with k = o.
    time 0: (1/2) sum [P(k,j,m,i,l) + P(k,j,m,l,i)] with i = o.
    time 1: (1/2) sum [P(k,j,m,i,l) + P(k,m,j,i,l)] with j = o.
    """
    if aset.scheme != "3pt":
        raise ValidationError("marginals are defined for three-coupling sets")
    amp = aset.as_array()
    o = int(outcome)
    if time == 2:
        val = amp[o].sum()
    elif time == 0:
        swapped = amp.transpose(0, 1, 2, 4, 3)
        val = 0.5 * (amp[:, :, :, o, :].sum() + swapped[:, :, :, o, :].sum())
    elif time == 1:
        swapped = amp.transpose(0, 2, 1, 3, 4)
        val = 0.5 * (amp[:, o].sum() + swapped[:, o].sum())
    else:
        raise ValidationError(f"time must be 0, 1 or 2, got {time}")
    if abs(val.imag) > 1e-12:
        raise NumericalError(f"marginal has imaginary part {val.imag:.3e}")
    return float(val.real)


def kirkwood_dirac_2pt(aset: PathAmplitudeSet) -> np.ndarray:
    """q(j, i) = sum over l of P(j, i, l)."""
    if aset.scheme != "2pt":
        raise ValidationError("Kirkwood-Dirac reduction needs a two-coupling set")
    return aset.as_array().sum(axis=2)
