"""Regenerative simulation for Harris-recurrent Markov processes via continuous-time Nummelin splitting."""

__version__ = "0.1.0"

from .cycles import ObservableSpec, RegenerationRecord, RegenerationStream
from .models import (
    CtmcModel,
    Diffusion1D,
    SpinFlipSpec,
    brownian_motion,
    build_two_state_ctmc,
    compile_spinflip,
    model_from_document,
    sample_bm_cycle_duration,
    simulate_ctmc_path,
    simulate_diffusion_cycles,
)
from .resolvent import resolvent_kernel, stationary_measure, transition_matrix
from .splitting import (
    MinorizationCert,
    SplitState,
    compute_minorization,
    forward_split_chain,
    kernel_q,
    retrospective_regeneration,
    sample_bridge_state,
    sample_jump_time,
)
from .regeneration import (
    ConstantEstimates,
    constants_from_cycles,
    count_regenerations,
    empirical_laplace,
    estimate_cf,
    kac_ratio,
)
from .bounds import BoundQuery, BoundValue, birge_massart, evaluate_bound, legendre_star, vstar_sandwich
from .streams import stream

__all__ = [
    "ObservableSpec", "RegenerationRecord", "RegenerationStream",
    "CtmcModel", "Diffusion1D", "SpinFlipSpec", "brownian_motion", "build_two_state_ctmc", "compile_spinflip",
    "model_from_document", "sample_bm_cycle_duration", "simulate_ctmc_path", "simulate_diffusion_cycles",
    "resolvent_kernel", "stationary_measure", "transition_matrix",
    "MinorizationCert", "SplitState", "compute_minorization", "forward_split_chain", "kernel_q",
    "retrospective_regeneration", "sample_bridge_state", "sample_jump_time",
    "ConstantEstimates", "constants_from_cycles", "count_regenerations", "empirical_laplace", "estimate_cf",
    "kac_ratio",
    "BoundQuery", "BoundValue", "birge_massart", "evaluate_bound", "legendre_star", "vstar_sandwich",
    "stream",
]
