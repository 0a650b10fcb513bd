"""Pseudospectral simulator and verification suite for rapidly rotating
convection in the infinite-Prandtl-number limit."""

import ctypes as _ctypes


def _tune_allocator() -> None:
    # Keep large transform buffers on the heap instead of fresh mmaps; avoids
    # repeated page-fault churn in the step loop.  Best effort, glibc only.
    try:
        libc = _ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except OSError:
        pass


_tune_allocator()

from .evolution import (  # noqa: E402
    Observer,
    SimState,
    SimulationUnstable,
    StepperConfig,
    default_dt,
    run,
    step,
    tendency,
)
from .flow import (  # noqa: E402
    AprioriRatios,
    DiagnosedFlow,
    PhysParams,
    apriori_ratios,
    residual_momentum,
    solve_flow,
    solve_flow_by_matrix,
)
from .meanstate import (  # noqa: E402
    MeanBalance,
    horizontal_mean,
    mean_gradient,
    residual_mean_balance,
)
from .spectral import (  # noqa: E402
    Grid,
    MeanProfile,
    SpectralField,
    apply_multiplier,
    dealias_product,
    inverse_horizontal_laplacian,
    norm,
    random_field,
    single_mode_field,
    to_physical,
    to_spectral,
)

__all__ = [
    "AprioriRatios",
    "DiagnosedFlow",
    "Grid",
    "MeanBalance",
    "MeanProfile",
    "Observer",
    "PhysParams",
    "SimState",
    "SimulationUnstable",
    "SpectralField",
    "StepperConfig",
    "apply_multiplier",
    "apriori_ratios",
    "dealias_product",
    "default_dt",
    "horizontal_mean",
    "inverse_horizontal_laplacian",
    "mean_gradient",
    "norm",
    "random_field",
    "residual_mean_balance",
    "residual_momentum",
    "run",
    "single_mode_field",
    "solve_flow",
    "solve_flow_by_matrix",
    "step",
    "tendency",
    "to_physical",
    "to_spectral",
]
