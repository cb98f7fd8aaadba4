"""Simulation and adjoint-based optimal control of a three-species
reaction-diffusion virotherapy model: uninfected tumor cells, infected
tumor cells, and free virus under a box-constrained infusion control."""

from .errors import (
    ConfigurationError,
    IterationError,
    SolverError,
    VerificationError,
    VirocontrolError,
)
from .fields import (
    Field,
    Grid,
    TimeGrid,
    build_grid,
    integrate,
    inner,
    laplacian_apply,
    norm_l2,
    norm_linf,
    read_snapshot,
    seminorm_h1,
    write_field_csv,
    write_snapshot,
)
from .kernel import (
    LinearSolveOptions,
    ScalarParabolicProblem,
    max_principle_bound,
    solve_scalar,
    stability_gap,
    step_scalar,
)
from .forward import (
    Control,
    InitialData,
    ModelParams,
    StateTrajectory,
    export_timeseries,
    reaction_rates,
    solve_forward,
    solve_forward_picard,
    step_forward,
    verify_bounds,
)
from .objective import (
    ChronicTracking,
    CustomObjective,
    Objective,
    TerminalMass,
    TerminalMassPlusDose,
    cost_partials,
    eval_J,
    eval_reduced,
)
from .sensitivity import (
    LinearizedCoefficients,
    TangentTrajectory,
    directional_derivative_check,
    linearize_coeffs,
    solve_linearized,
)
from .adjoint import (
    AdjointTrajectory,
    duality_check,
    fd_gradient_check,
    reduced_gradient,
    solve_adjoint,
    terminal_conditions,
)
from .optimizer import (
    OptimizationHistory,
    OptimizerOptions,
    kkt_sign_report,
    project,
    solve_ocp,
    stationarity_residual,
)
from .config import RunConfig, parse_config

__version__ = "0.1.0"
