"""Dense complex linear algebra for small Hilbert spaces.

Operators are stored as two-dimensional ``complex128`` numpy arrays (the
``CMatrix`` of the library). The typed wrappers below validate their
invariants on construction and keep read-only copies of the data, so every
operation in this module is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constants import JACOBI_MAX_SWEEPS, MAX_DIM, TOL
from .errors import NumericalError, ValidationError

__all__ = [
    "as_cmatrix",
    "DensityState",
    "UnitaryOp",
    "SpectralObservable",
    "KrausChannel",
    "hermitian_eigendecompose",
    "evolve",
    "apply_channel",
    "tensor",
    "partial_trace",
    "amplitude_damping",
    "depolarizing",
    "PAULI_X",
    "PAULI_Y",
    "PAULI_Z",
]

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


def _maxabs(a) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def as_cmatrix(m, square: bool = True) -> np.ndarray:
    """Coerce ``m`` to a finite complex 2-D array, raising on bad input."""
    try:
        a = np.asarray(m, dtype=complex)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"not a numeric matrix: {exc}") from None
    if a.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix has non-finite entries")
    if square and a.shape[0] != a.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    return a


def _check_dim(d: int):
    if d < 1 or d > MAX_DIM:
        raise ValidationError(f"dimension {d} outside supported range 1..{MAX_DIM}")


@dataclass(frozen=True)
class DensityState:
    """A density matrix: Hermitian, unit trace, positive semidefinite."""

    matrix: np.ndarray

    def __post_init__(self):
        m = as_cmatrix(self.matrix)
        if _maxabs(m - m.conj().T) > TOL.hermitian:
            raise ValidationError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > TOL.trace:
            raise ValidationError(f"density matrix trace {np.trace(m).real:.15g} != 1")
        # eigvalsh only reads one triangle; symmetrize so round-off is shared
        evals = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
        if evals[0] < -TOL.psd:
            raise ValidationError(f"density matrix has negative eigenvalue {evals[0]:.3e}")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def pure(cls, psi) -> "DensityState":
        v = np.asarray(psi, dtype=complex).reshape(-1)
        nrm = np.linalg.norm(v)
        if nrm == 0:
            raise ValidationError("zero state vector")
        v = v / nrm
        return cls(np.outer(v, v.conj()))

    @classmethod
    def diagonal(cls, probs) -> "DensityState":
        return cls(np.diag(np.asarray(probs, dtype=float)))

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityState":
        return cls(np.eye(dim) / dim)

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def expectation(self, op) -> complex:
        return complex(np.trace(as_cmatrix(op) @ self.matrix))


@dataclass(frozen=True)
class UnitaryOp:
    matrix: np.ndarray

    def __post_init__(self):
        m = as_cmatrix(self.matrix)
        err = _maxabs(m.conj().T @ m - np.eye(m.shape[0]))
        if err > TOL.unitary:
            raise ValidationError(f"matrix is not unitary (max deviation {err:.3e})")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def dagger(self) -> "UnitaryOp":
        return UnitaryOp(self.matrix.conj().T)

    def __matmul__(self, other: "UnitaryOp") -> "UnitaryOp":
        """Operator product; ``(A @ B)`` applies ``B`` first."""
        return UnitaryOp(self.matrix @ other.matrix)

    @classmethod
    def identity(cls, dim: int) -> "UnitaryOp":
        return cls(np.eye(dim))

    @classmethod
    def from_hamiltonian(cls, H, t: float = 1.0) -> "UnitaryOp":
        """exp(-i H t) for Hermitian ``H`` (hbar = 1)."""
        obs = H if isinstance(H, SpectralObservable) else hermitian_eigendecompose(H)
        return cls(obs.phase(-t))


@dataclass(frozen=True)
class SpectralObservable:
    """Hermitian observable in spectral form.

    ``eigenvalues`` are distinct and strictly increasing; ``projectors[i]`` is
    the orthogonal projector onto the eigenspace of ``eigenvalues[i]``.
    """

    eigenvalues: np.ndarray
    projectors: tuple
    matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vals = np.asarray(self.eigenvalues, dtype=float).reshape(-1)
        projs = tuple(as_cmatrix(p) for p in self.projectors)
        if len(vals) == 0 or len(vals) != len(projs):
            raise ValidationError("need one projector per eigenvalue")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("eigenvalues must be finite")
        if np.any(np.diff(vals) <= TOL.degeneracy):
            raise ValidationError("eigenvalues must be strictly increasing and separated by > 1e-9")
        d = projs[0].shape[0]
        _check_dim(d)
        total = np.zeros((d, d), dtype=complex)
        for i, p in enumerate(projs):
            if p.shape != (d, d):
                raise ValidationError("projector dimensions disagree")
            if _maxabs(p - p.conj().T) > TOL.projector or _maxabs(p @ p - p) > TOL.projector:
                raise ValidationError(f"projector {i} is not an orthogonal projector")
            if np.real(np.trace(p)) < 0.5:
                raise ValidationError(f"projector {i} has rank 0")
            for j in range(i):
                if _maxabs(p @ projs[j]) > TOL.projector:
                    raise ValidationError(f"projectors {j} and {i} are not orthogonal")
            total += p
        if _maxabs(total - np.eye(d)) > TOL.projector:
            raise ValidationError("projectors do not resolve the identity")
        object.__setattr__(self, "eigenvalues", np.array(vals))
        self.eigenvalues.setflags(write=False)
        object.__setattr__(self, "projectors", tuple(_frozen(p) for p in projs))
        m = sum(a * p for a, p in zip(vals, self.projectors))
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def dim(self) -> int:
        return self.projectors[0].shape[0]

    @property
    def n_outcomes(self) -> int:
        return len(self.eigenvalues)

    @property
    def projector_stack(self) -> np.ndarray:
        return np.stack(self.projectors)

    @classmethod
    def from_matrix(cls, H) -> "SpectralObservable":
        return hermitian_eigendecompose(H)

    def is_binary(self) -> bool:
        """True when the spectrum is exactly {-1, +1}."""
        return self.n_outcomes == 2 and np.allclose(self.eigenvalues, [-1.0, 1.0], atol=TOL.degeneracy)

    def phase(self, theta: float) -> np.ndarray:
        """exp(i theta A) as a matrix."""
        return sum(np.exp(1j * theta * a) * p for a, p in zip(self.eigenvalues, self.projectors))

    def block_coherence(self, rho) -> float:
        """Largest off-eigenspace-block entry of ``rho`` in this observable's basis."""
        m = rho.matrix if isinstance(rho, DensityState) else as_cmatrix(rho)
        worst = 0.0
        for a, pa in enumerate(self.projectors):
            for b in range(a + 1, self.n_outcomes):
                worst = max(worst, _maxabs(pa @ m @ self.projectors[b]))
        return worst


@dataclass(frozen=True)
class KrausChannel:
    kraus_ops: tuple

    def __post_init__(self):
        ops = tuple(as_cmatrix(k) for k in self.kraus_ops)
        if not ops:
            raise ValidationError("a channel needs at least one Kraus operator")
        d = ops[0].shape[0]
        _check_dim(d)
        if any(k.shape != (d, d) for k in ops):
            raise ValidationError("Kraus operator dimensions disagree")
        s = sum(k.conj().T @ k for k in ops)
        err = _maxabs(s - np.eye(d))
        if err > TOL.kraus:
            raise ValidationError(f"channel is not trace preserving (max deviation {err:.3e})")
        object.__setattr__(self, "kraus_ops", tuple(_frozen(k) for k in ops))

    @property
    def dim(self) -> int:
        return self.kraus_ops[0].shape[0]

    def apply_matrix(self, x: np.ndarray) -> np.ndarray:
        """Kraus sum on an arbitrary (not necessarily positive) operator."""
        return sum(k @ x @ k.conj().T for k in self.kraus_ops)

    def isometry(self) -> np.ndarray:
        """Stinespring isometry V: H -> H (x) E with E of dimension len(kraus_ops)."""
        n = len(self.kraus_ops)
        d = self.dim
        v = np.zeros((d * n, d), dtype=complex)
        for k, op in enumerate(self.kraus_ops):
            v[k::n, :] = op
        return v


def _jacobi_hermitian(h: np.ndarray):
    """Cyclic complex Jacobi. Returns (eigenvalues, eigenvector columns)."""
    a = np.array(h, dtype=complex)
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    scale = max(1.0, float(np.linalg.norm(a)))
    target = 1e-14 * scale
    for _ in range(JACOBI_MAX_SWEEPS + 1):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= target:
            return np.real(np.diag(a)).copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                b = a[p, q]
                mag = abs(b)
                if mag < 1e-300:
                    continue
                # D removes the phase of a[p,q]; R is then a real Givens rotation
                ph = b / mag
                theta = 0.5 * np.arctan2(2.0 * mag, a[p, p].real - a[q, q].real)
                c, s = np.cos(theta), np.sin(theta)
                g = np.array([[c, -s], [s * np.conj(ph), c * np.conj(ph)]])
                idx = [p, q]
                a[:, idx] = a[:, idx] @ g
                a[idx, :] = g.conj().T @ a[idx, :]
                a[p, q] = a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
                v[:, idx] = v[:, idx] @ g
    raise NumericalError(f"Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps")


def hermitian_eigendecompose(H) -> SpectralObservable:
    """Spectral decomposition of a Hermitian matrix by cyclic Jacobi rotations.

    Eigenvalues closer than 1e-9 are merged into one eigenspace; the merged
    eigenvalue is the mean of the group.
    """
    h = as_cmatrix(H)
    _check_dim(h.shape[0])
    if _maxabs(h - h.conj().T) > TOL.hermitian:
        raise ValidationError("matrix is not Hermitian")
    h = 0.5 * (h + h.conj().T)
    vals, vecs = _jacobi_hermitian(h)
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    groups = [[0]]
    for i in range(1, len(vals)):
        if vals[i] - vals[groups[-1][-1]] < TOL.degeneracy:
            groups[-1].append(i)
        else:
            groups.append([i])
    eig = [float(np.mean(vals[g])) for g in groups]
    projs = [vecs[:, g] @ vecs[:, g].conj().T for g in groups]
    return SpectralObservable(np.array(eig), tuple(projs))


def evolve(rho: DensityState, U: UnitaryOp) -> DensityState:
    if rho.dim != U.dim:
        raise ValidationError(f"dimension mismatch: state {rho.dim}, unitary {U.dim}")
    m = U.matrix @ rho.matrix @ U.matrix.conj().T
    return DensityState(0.5 * (m + m.conj().T))


def apply_channel(rho: DensityState, C: KrausChannel) -> DensityState:
    if rho.dim != C.dim:
        raise ValidationError(f"dimension mismatch: state {rho.dim}, channel {C.dim}")
    m = C.apply_matrix(rho.matrix)
    return DensityState(0.5 * (m + m.conj().T))


def tensor(A, B) -> np.ndarray:
    return np.kron(as_cmatrix(A, square=False), as_cmatrix(B, square=False))


def _ptrace(m: np.ndarray, keep: Sequence[int], dims: Sequence[int]) -> np.ndarray:
    n = len(dims)
    t = m.reshape(tuple(dims) + tuple(dims))
    # trace the highest subsystems first so lower axis numbers stay valid
    for ax in sorted(set(range(n)) - set(keep), reverse=True):
        cur = t.ndim // 2
        t = np.trace(t, axis1=ax, axis2=ax + cur)
    dk = int(np.prod([dims[k] for k in sorted(keep)])) if keep else 1
    return t.reshape(dk, dk)


def partial_trace(R, keep, dims: Sequence[int]) -> DensityState:
    """Reduced state on the subsystems listed in ``keep`` (an index or a list)."""
    m = R.matrix if isinstance(R, DensityState) else as_cmatrix(R)
    dims = [int(d) for d in dims]
    if any(d < 1 for d in dims) or int(np.prod(dims)) != m.shape[0]:
        raise ValidationError(f"dims {dims} do not factorize a {m.shape[0]}-dimensional space")
    keep = [keep] if np.isscalar(keep) else list(keep)
    if not keep or any(k < 0 or k >= len(dims) for k in keep) or len(set(keep)) != len(keep):
        raise ValidationError(f"bad subsystem selection {keep}")
    red = _ptrace(m, sorted(keep), dims)
    return DensityState(0.5 * (red + red.conj().T))


def amplitude_damping(p: float, ground=None, excited=None) -> KrausChannel:
    """Qubit amplitude damping with decay probability ``p``.

    The excited vector relaxes to the ground vector; by default these are the
    computational states |1> and |0>.
    """
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"damping probability {p} outside [0, 1]")
    g = np.array([1, 0], dtype=complex) if ground is None else np.asarray(ground, dtype=complex)
    e = np.array([0, 1], dtype=complex) if excited is None else np.asarray(excited, dtype=complex)
    g = g / np.linalg.norm(g)
    e = e / np.linalg.norm(e)
    if abs(np.vdot(g, e)) > TOL.projector:
        raise ValidationError("ground and excited vectors must be orthogonal")
    gg, ee = np.outer(g, g.conj()), np.outer(e, e.conj())
    k0 = gg + np.sqrt(1.0 - p) * ee
    k1 = np.sqrt(p) * np.outer(g, e.conj())
    return KrausChannel((k0, k1))


def depolarizing(dim: int, p: float) -> KrausChannel:
    """rho -> (1-p) rho + p I/d, written with generalized Pauli Kraus operators."""
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"depolarizing probability {p} outside [0, 1]")
    w = np.exp(2j * np.pi / dim)
    shift = np.roll(np.eye(dim), 1, axis=0)
    clock = np.diag(w ** np.arange(dim))
    ops = []
    for a in range(dim):
        for b in range(dim):
            weight = p / dim**2 + (1.0 - p if a == b == 0 else 0.0)
            if weight > 0:
                ops.append(np.sqrt(weight) * np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b))
    return KrausChannel(tuple(ops))
