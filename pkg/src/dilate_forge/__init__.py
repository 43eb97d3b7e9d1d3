"""Finite-dimensional time-dependent dilations of open quantum dynamics."""

__version__ = "0.1.0"

from .core import (
    kron,
    partial_trace,
    partial_trace_ancilla,
    vec,
    unvec,
    reshuffle,
    unreshuffle,
    kraus_to_superop,
    choi_to_kraus,
    apply_superop,
    trace_distance,
    operator_norm,
    validate_cptp,
)
from .generators import (
    TimeProfile,
    TimeGrid,
    LindbladSpec,
    ChannelFamily,
    lindblad_superop,
    propagate_channel,
    evolve_state_master,
)
from .dilation import (
    EigenTrack,
    KrausFamily,
    DilationPath,
    DivergenceReport,
    CutoffPolicy,
    choi_path,
    eigentrack,
    kraus_from_eigentrack,
    complete_unitary,
    hamiltonian_from_unitary,
    dilate,
    diagnose,
    apply_cutoff,
)

from .fixtures import AnalyticFixture
from .simulate import (
    SimulationResult,
    ComparisonReport,
    evolve_dilated,
    oracle_path,
    compare_paths,
    unitary_error_bound,
    fig2_experiment,
    fig3_dataset,
)
from .transforms import (
    FrameSpec,
    PerturbationSpec,
    RescaleMap,
    frame_change,
    compose_commuting,
    perturbative_channel,
    perturbative_dilation,
    rescale_time,
    tensor_independent,
)
from .estimator import DilationEstimator

__all__ = [name for name in dir() if not name.startswith("_")]
