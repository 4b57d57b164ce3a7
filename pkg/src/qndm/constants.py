"""Numerical tolerances and protocol defaults, kept in one place."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-12
    trace: float = 1e-12
    psd: float = 1e-10
    unitary: float = 1e-10
    projector: float = 1e-10
    kraus: float = 1e-10
    degeneracy: float = 1e-9
    reconstruct: float = 1e-10
    merge: float = 1e-9
    imag_residue: float = 1e-10
    normalization: float = 1e-9
    route_agreement: float = 1e-10
    exact_negativity: float = 1e-10
    reconstructed_negativity: float = 0.01
    coherence: float = 1e-9


TOL = Tolerances()

MAX_DIM = 16
JACOBI_MAX_SWEEPS = 100

# finite-difference steps for the moment identities
FD_STEP_FIRST = 1e-5
FD_STEP_SECOND = 1e-3

# relative coupling shifts used by the certification runs
DEFAULT_OFFSETS = (0.05, 0.075)
DEFAULT_CHI = np.pi / 7

CSV_FLOAT_FORMAT = "{:.17g}"
