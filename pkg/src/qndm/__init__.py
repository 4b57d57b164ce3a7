"""Small-system simulator for non-demolition quasi-probabilities and macrorealism tests."""

from .constants import TOL, Tolerances
from .core import (
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
from .errors import NumericalError, QNDMError, ValidationError
from .macrorealism import (
    CertificationVerdict,
    LGResult,
    certify_mr,
    coherence_oracle,
    lg_correlator,
    lg_parameter,
)
from .protocol import (
    CharFnGrid,
    CouplingEvent,
    DetectorModel,
    PhaseInsertion,
    ProtocolSchedule,
    char_fn_detector,
    char_fn_exact,
    first_moment,
    reconstruct_distribution,
    sample_shots,
    second_moment,
)
from .quasiprob import (
    PathAmplitudeSet,
    QuasiProbDistribution,
    TPMDistribution,
    amplitudes_2pt,
    amplitudes_3pt,
    collapse,
    kirkwood_dirac_2pt,
    nsit_marginal,
    split_classical_quantum,
    tpm_distribution,
)

__version__ = "0.1.0"
