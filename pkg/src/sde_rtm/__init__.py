"""Strong-order SDE integrators with drift taming and drift-time
randomization, plus a Monte-Carlo benchmark harness."""

from .model import (
    BUILTIN_FACTORIES,
    DomainError,
    EvaluationError,
    InvalidParameterError,
    NoiseStructure,
    SdeProblem,
    TamingSplit,
    eval_diffusion,
    eval_drift,
    eval_milstein_tensor,
    finite_difference_milstein_tensor,
    make_builtin,
)
from .noise import (
    BrownianGrid,
    LevelError,
    RandomizationStream,
    SeedPolicy,
    StreamRole,
    UnsupportedNoiseStructureError,
    coarsen,
    derive_substream,
    iterated_integrals,
    randomized_time,
    sample_brownian_grid,
    sample_randomization,
    terminal_value,
)
from .schemes import (
    DimensionError,
    PathResult,
    SchemeKind,
    StepContext,
    TamingAudit,
    audit_taming,
    integrate_path,
    simulate_batch,
    step,
    tame_drift,
)
from .analysis import (
    DegenerateDataError,
    ErrorRow,
    ErrorTable,
    MomentRow,
    MomentTable,
    RateFit,
    blowup_demo,
    fit_rate,
    moment_experiment,
    simulate_terminals,
    strong_error_experiment,
)

__version__ = "0.1.0"
