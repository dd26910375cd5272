"""lpflow: spectral analysis and solvers for partially diffusive hyperbolic systems."""

from lpflow.grid import (
    BlockIndex,
    Field,
    FilterBank,
    GridSpec,
    GridTooCoarseError,
    build_filter_bank,
    dyadic_block,
    low_freq_cutoff,
    spectral_gradient,
)
from lpflow.norms import BesovIndex, NormRecord, besov_norm, chemin_lerner_norm
from lpflow.propagators import (
    ConstantParabolicOp,
    FrozenCoeffStep,
    Trajectory,
    solve_constant_parabolic,
    step_linear_hyperbolic,
    step_linear_parabolic_variable,
)
from lpflow.solver import (
    IterationConfig,
    IterationDiagnostics,
    RunResult,
    SplitState,
    compute_T0,
    iterate_subcritical,
    solve_critical,
)
from lpflow.systems import (
    SystemSpec,
    assemble_barotropic,
    assemble_nsf,
    gamma_law_barotropic,
)

__version__ = "0.1.0"

__all__ = [
    "BesovIndex",
    "BlockIndex",
    "ConstantParabolicOp",
    "Field",
    "FilterBank",
    "FrozenCoeffStep",
    "GridSpec",
    "GridTooCoarseError",
    "IterationConfig",
    "IterationDiagnostics",
    "NormRecord",
    "RunResult",
    "SplitState",
    "SystemSpec",
    "Trajectory",
    "assemble_barotropic",
    "assemble_nsf",
    "besov_norm",
    "build_filter_bank",
    "chemin_lerner_norm",
    "compute_T0",
    "dyadic_block",
    "gamma_law_barotropic",
    "iterate_subcritical",
    "low_freq_cutoff",
    "solve_constant_parabolic",
    "solve_critical",
    "spectral_gradient",
    "step_linear_hyperbolic",
    "step_linear_parabolic_variable",
    "__version__",
]
