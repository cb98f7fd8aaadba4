"""Projected gradient descent over box-constrained infusion controls.

The admissible set is the pointwise box [0, cap], optionally restricted to
spatially constant (time-only) controls; projection onto the latter is the
spatial mean per time slice followed by the clip, and the two projections
commute. Steps are accepted under the projected Armijo rule

    f(u_new) <= f(u) - c * ||u_new - u||^2 / s,

measured in the space-time L2 norm, which is the correct sufficient
decrease test at active box constraints. Stationarity is monitored as the
norm of u - P(u - grad) with a unit trial step inside the projection; it
vanishes exactly at points satisfying the first-order optimality
condition. Each line search starts at twice the previously accepted step,
capped at ``initial_step``. Runs that exhaust backtracking return the best
iterate with a stalled flag instead of raising, since the iteration record
itself is the product.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .fields import Grid, TimeGrid, spacetime_norm_l2
from .forward import (
    SPACE_TIME,
    TIME_ONLY,
    Control,
    InitialData,
    ModelParams,
    StateTrajectory,
    solve_forward,
)
from .adjoint import AdjointTrajectory, reduced_gradient, solve_adjoint
from .kernel import DEFAULT_SOLVE_OPTIONS, LinearSolveOptions
from .objective import Objective, eval_J


@dataclass(frozen=True)
class OptimizerOptions:
    max_outer_iterations: int = 200
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0
    stationarity_tol: float = 1e-6
    max_backtracks: int = 40

    def __post_init__(self):
        if not 0.0 < self.armijo_c < 1.0:
            raise ConfigurationError(f"armijo_c must lie in (0, 1), got {self.armijo_c}")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ConfigurationError(
                f"backtrack_factor must lie in (0, 1), got {self.backtrack_factor}"
            )
        if self.initial_step <= 0.0:
            raise ConfigurationError(f"initial_step must be positive, got {self.initial_step}")
        if self.max_outer_iterations < 0 or self.max_backtracks < 0:
            raise ConfigurationError("iteration counts must be nonnegative")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    f_value: float
    residual: float
    step: float
    backtracks: int


@dataclass
class OptimizationHistory:
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    stalled: bool = False

    def append(self, *args) -> None:
        self.records.append(IterationRecord(*args))

    @property
    def f_values(self) -> list[float]:
        return [r.f_value for r in self.records]

    @property
    def residuals(self) -> list[float]:
        return [r.residual for r in self.records]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "f", "residual", "step", "backtracks"])
            for r in self.records:
                writer.writerow([
                    r.iteration, f"{r.f_value:.17g}", f"{r.residual:.17g}",
                    f"{r.step:.17g}", r.backtracks,
                ])


def project_values(u_raw: np.ndarray, cap: float, mode: str, grid: Grid) -> np.ndarray:
    """Project raw per-step values onto the admissible set (values only)."""
    arr = np.asarray(u_raw, dtype=np.float64)
    if mode == TIME_ONLY and arr.ndim > 1:
        means = arr.reshape(arr.shape[0], -1).mean(axis=1)
        arr = np.broadcast_to(means.reshape((arr.shape[0],) + (1,) * grid.dim), arr.shape)
    return np.clip(arr, 0.0, cap)


def project(u_raw: np.ndarray, cap: float, mode: str, grid: Grid, time: TimeGrid) -> Control:
    """Project a raw space-time array onto the admissible set.

    Pointwise clip to [0, cap]; time-only mode first replaces each slice
    by its spatial mean (the L2 projection onto constant slices).
    """
    values = project_values(u_raw, cap, mode, grid)
    if mode == TIME_ONLY and values.ndim > 1:
        values = values.reshape(time.steps, -1)[:, 0]
    return Control(mode, values, cap, grid, time)


def stationarity_residual(u: Control, grad: np.ndarray) -> float:
    """Space-time L2 norm of u - P(u - grad), with a unit trial step inside
    the projection; zero exactly at first-order optimal controls."""
    dense = u.as_spacetime()
    if grad.shape != dense.shape:
        raise ConfigurationError(
            f"gradient shape {grad.shape} does not match control shape {dense.shape}"
        )
    moved = project_values(dense - grad, u.cap, u.mode, u.grid)
    return spacetime_norm_l2(dense - moved, u.grid, u.time.dt)


@dataclass(frozen=True)
class KktReport:
    """Sign structure of the gradient against the active box constraints."""

    violation_fraction: float
    n_violations: int
    n_exempt: int
    n_cells: int


def kkt_sign_report(u: Control, grad: np.ndarray, tol: float) -> KktReport:
    """Fraction of space-time cells violating first-order sign structure:
    where the gradient exceeds ``tol`` the control must sit at 0, where it
    is below ``-tol`` at the cap; cells with |gradient| <= tol are exempt."""
    dense = u.as_spacetime()
    positive = grad > tol
    negative = grad < -tol
    exempt = ~(positive | negative)
    violations = int((positive & (dense > 0.0)).sum() + (negative & (dense < u.cap)).sum())
    n_cells = dense.size
    return KktReport(
        violation_fraction=violations / n_cells,
        n_violations=violations,
        n_exempt=int(exempt.sum()),
        n_cells=n_cells,
    )


def solve_ocp(
    init: InitialData,
    p: ModelParams,
    time: TimeGrid,
    obj: Objective,
    opts: OptimizerOptions = OptimizerOptions(),
    u_init: Control | None = None,
    solve_options: LinearSolveOptions = DEFAULT_SOLVE_OPTIONS,
) -> tuple[Control, StateTrajectory, AdjointTrajectory, OptimizationHistory]:
    """Minimize the reduced cost by projected gradient descent with Armijo
    backtracking. Returns the final control, its state and adjoint, and
    the per-iteration history (f values are non-increasing by
    construction)."""
    grid = init.grid
    if u_init is None:
        u_init = Control.zero(p.u_cap, grid, time, SPACE_TIME)
    u = u_init
    history = OptimizationHistory()

    def evaluate(ctrl: Control):
        state = solve_forward(init, ctrl, time, p, solve_options)
        f_val = eval_J(state, ctrl, obj)
        adj = solve_adjoint(state, ctrl, obj, p, options=solve_options)
        grad = reduced_gradient(adj.adj_v, ctrl, obj, state)
        return state, f_val, adj, grad

    state, f_val, adj, grad = evaluate(u)
    residual = stationarity_residual(u, grad)
    history.append(0, f_val, residual, 0.0, 0)

    s_start = opts.initial_step
    for it in range(1, opts.max_outer_iterations + 1):
        if residual <= opts.stationarity_tol:
            history.converged = True
            break
        s = s_start
        accepted = False
        backtracks = 0
        dense = u.as_spacetime()
        for backtracks in range(opts.max_backtracks + 1):
            trial = project(dense - s * grad, u.cap, u.mode, grid, time)
            move = spacetime_norm_l2(trial.as_spacetime() - dense, grid, time.dt)
            if move > 0.0:
                trial_state = solve_forward(init, trial, time, p, solve_options)
                f_trial = eval_J(trial_state, trial, obj)
                if f_trial <= f_val - opts.armijo_c * move * move / s:
                    accepted = True
                    break
            s *= opts.backtrack_factor
        if not accepted:
            history.stalled = True
            break
        # warm-start the next search just above the accepted step
        s_start = min(opts.initial_step, 2.0 * s)
        u = trial
        state = trial_state
        f_val = f_trial
        adj = solve_adjoint(state, u, obj, p, options=solve_options)
        grad = reduced_gradient(adj.adj_v, u, obj, state)
        residual = stationarity_residual(u, grad)
        history.append(it, f_val, residual, s, backtracks)
    else:
        history.converged = residual <= opts.stationarity_tol

    if residual <= opts.stationarity_tol:
        history.converged = True
    return u, state, adj, history
