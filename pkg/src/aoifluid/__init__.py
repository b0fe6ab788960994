"""Exact age-of-information distributions for bufferless and single-buffer queues.

The package solves the stationary age and peak-age laws of two update-queue
disciplines by mapping their cycle structure onto Markov fluid queues, and
cross-validates the analytic results with a discrete-event simulator.
"""

from .errors import (
    AoiFluidError,
    ContractError,
    DegenerateConditioningError,
    ModelInstabilityError,
    NumericalError,
    PreconditionError,
    StructuralError,
)
from .mfq import (
    GmfqSpec,
    MatrixExpForm,
    SteadyState,
    conditional_entry_density,
    form_moment,
    householder_reducer,
    solve,
)
from .models import (
    AgeResult,
    BufferlessSpec,
    SingleBufferSpec,
    StatePartition,
    age_violation,
    analyze_bufferless,
    analyze_single_buffer,
    build_bufferless,
    build_residual_process,
    build_single_buffer,
    wait_time_distribution,
)
from .phdist import (
    MeDistribution,
    PhDistribution,
    fit_mean_scov,
    me_from_form,
)
from .policy import POLICY, NumericPolicy
from .simulator import SimConfig, SimResult, empirical_aoi_cdf, empirical_paoi_cdf, simulate

__version__ = "0.1.0"

__all__ = [
    "AgeResult",
    "AoiFluidError",
    "BufferlessSpec",
    "ContractError",
    "DegenerateConditioningError",
    "GmfqSpec",
    "MatrixExpForm",
    "MeDistribution",
    "ModelInstabilityError",
    "NumericPolicy",
    "NumericalError",
    "PhDistribution",
    "POLICY",
    "PreconditionError",
    "SimConfig",
    "SimResult",
    "SingleBufferSpec",
    "StatePartition",
    "SteadyState",
    "StructuralError",
    "age_violation",
    "analyze_bufferless",
    "analyze_single_buffer",
    "build_bufferless",
    "build_residual_process",
    "build_single_buffer",
    "conditional_entry_density",
    "empirical_aoi_cdf",
    "empirical_paoi_cdf",
    "fit_mean_scov",
    "form_moment",
    "householder_reducer",
    "me_from_form",
    "simulate",
    "solve",
    "wait_time_distribution",
]
