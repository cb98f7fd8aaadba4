"""Backward-in-time multipliers and the reduced cost gradient.

The adjoint system is the transpose of the linearized dynamics driven by
the running-cost gradients, solved backward from terminal data equal to
the terminal-cost gradients at the final state. Substituting reversed
time turns it into a forward parabolic system, which is stepped by the
same kernel and splitting as the state solver with coefficients frozen at
the level being stepped from.

The multiplier conjugate to the virus equation, combined with the direct
control derivative of the running cost, is the gradient of the reduced
cost with respect to the control. The discretizations of the state and
adjoint are transposes of each other only up to first order in dt, so the
duality identity and the finite-difference gradient agree at O(dt + h^2)
and tighten under refinement; the checks below measure exactly that.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .fields import Field, Grid, TimeGrid, norm_l2_raw, spacetime_norm_l2
from .forward import Control, InitialData, ModelParams, StateTrajectory, solve_forward
from .kernel import DEFAULT_SOLVE_OPTIONS, LinearSolveOptions, step_scalar_raw
from .objective import Objective, eval_J
from .sensitivity import (
    LinearizedCoefficients,
    TangentTrajectory,
    _delta_u_per_step,
    _own_gains,
    linearize_coeffs,
)

RESIDUAL_EPS = 1e-30


class AdjointTrajectory:
    """Multipliers (adj_rho1, adj_rho2, adj_v) conjugate to the three state
    components, indexed on the same time levels as the state."""

    __slots__ = ("adj_rho1", "adj_rho2", "adj_v", "grid", "time")

    def __init__(self, adj_rho1, adj_rho2, adj_v, grid: Grid, time: TimeGrid):
        self.adj_rho1 = adj_rho1
        self.adj_rho2 = adj_rho2
        self.adj_v = adj_v
        self.grid = grid
        self.time = time
        for name in ("adj_rho1", "adj_rho2", "adj_v"):
            arr = getattr(self, name)
            if not np.isfinite(arr).all():
                raise ConfigurationError(f"adjoint component {name} is not finite")
            arr.flags.writeable = False

    def field(self, component: str, k: int) -> Field:
        return Field(self.grid, getattr(self, component)[k], check=False)


def terminal_conditions(
    state_T: tuple[Field, Field, Field], objective: Objective
) -> tuple[Field, Field, Field]:
    """Adjoint data at the final time: the terminal-cost gradient evaluated
    at the final state."""
    r1, r2, v = state_T
    g1, g2, g3 = objective.terminal_grad(r1.values, r2.values, v.values)
    grid = r1.grid
    return (
        Field(grid, np.broadcast_to(g1, grid.shape)),
        Field(grid, np.broadcast_to(g2, grid.shape)),
        Field(grid, np.broadcast_to(g3, grid.shape)),
    )


def solve_adjoint(
    base: StateTrajectory,
    ctrl: Control,
    objective: Objective,
    p: ModelParams,
    coeffs: LinearizedCoefficients | None = None,
    options: LinearSolveOptions = DEFAULT_SOLVE_OPTIONS,
) -> AdjointTrajectory:
    """Solve the transposed linearized system backward along ``base``.

    ``coeffs`` defaults to the linearization of ``base``; passing explicit
    coefficients allows decoupled diagnostics.
    """
    grid = base.grid
    time = base.time
    if ctrl.grid != grid or ctrl.time != time:
        raise ConfigurationError("control does not match the base trajectory")
    if coeffs is None:
        coeffs = linearize_coeffs(base, p)
    n = time.steps
    dt = time.dt
    gains = _own_gains(p)
    shape = (n + 1,) + grid.shape
    adj = [np.empty(shape), np.empty(shape), np.empty(shape)]
    term = terminal_conditions(
        (base.field("rho1", n), base.field("rho2", n), base.field("v", n)), objective
    )
    for i in range(3):
        adj[i][n] = term[i].values
    # backward sweep; coefficients and cost gradients at the level being
    # stepped from, control sampled on the step's interval
    for k in range(n, 0, -1):
        jac = coeffs.jacobian_at(k)
        run_grad = objective.running_grad(
            base.rho1[k], base.rho2[k], base.v[k], ctrl.slice_values(k - 1)
        )
        cur = [adj[i][k] for i in range(3)]
        for i in range(3):
            c = gains[i] - jac[i][i]
            f = gains[i] * cur[i] + np.broadcast_to(run_grad[i], grid.shape)
            for j in range(3):
                if j != i:
                    f = f + jac[j][i] * cur[j]
            adj[i][k - 1] = step_scalar_raw(cur[i], c, f, dt, grid, options)
    return AdjointTrajectory(adj[0], adj[1], adj[2], grid, time)


def reduced_gradient(
    adj_v: np.ndarray,
    ctrl: Control,
    objective: Objective,
    base: StateTrajectory | None = None,
) -> np.ndarray:
    """Gradient of the reduced cost with respect to the control.

    Per step: the virus multiplier plus the direct control derivative of
    the running cost. The multiplier is taken at the step's right
    endpoint, matching where the step's control first influences the
    state (a control acting on the final step cannot change a terminal
    cost, and the right-endpoint multiplier is exactly zero there); the
    running-cost derivative uses the step's left endpoint like the cost
    quadrature itself. For time-only controls each slice is additionally
    averaged over the domain, which is the L2 projection of the gradient
    onto spatially constant slices. Returns a dense (steps, *grid.shape)
    array.
    """
    grid = ctrl.grid
    n = ctrl.time.steps
    if adj_v.shape != (n + 1,) + grid.shape:
        raise ConfigurationError(
            f"adjoint stack shape {adj_v.shape} does not match "
            f"({n + 1}, {grid.shape})"
        )
    grad = np.empty((n,) + grid.shape)
    for k in range(n):
        u_k = ctrl.slice_values(k)
        if base is not None:
            r1, r2, v = base.state_at(k)
        else:
            r1 = r2 = v = np.zeros(grid.shape)
        du = objective.running_grad(r1, r2, v, u_k)[3]
        grad[k] = adj_v[k + 1] + du
    if ctrl.mode == "time_only":
        means = grad.reshape(n, -1).mean(axis=1)
        grad = np.broadcast_to(
            means.reshape((n,) + (1,) * grid.dim), grad.shape
        ).copy()
    return grad


def duality_check(
    tangent: TangentTrajectory,
    adjoint: AdjointTrajectory,
    delta_u,
    objective: Objective,
    base: StateTrajectory,
    ctrl: Control,
) -> float:
    """Relative gap between the two ways of pairing a control perturbation
    with the cost: through the tangent state (cost gradients against the
    tangent) and through the adjoint (perturbation against the virus
    multiplier). Zero perturbation gives exactly zero."""
    grid = base.grid
    time = base.time
    if tangent.grid != grid or adjoint.grid != grid:
        raise ConfigurationError("tangent/adjoint grids do not match the base")
    if tangent.time != time or adjoint.time != time:
        raise ConfigurationError("tangent/adjoint time grids do not match the base")
    du = _delta_u_per_step(delta_u, time, grid)
    n = time.steps
    dt = time.dt
    vol = grid.cell_volume

    tg = objective.terminal_grad(base.rho1[n], base.rho2[n], base.v[n])
    lhs = float(
        (
            np.broadcast_to(tg[0], grid.shape) * tangent.d_rho1[n]
            + np.broadcast_to(tg[1], grid.shape) * tangent.d_rho2[n]
            + np.broadcast_to(tg[2], grid.shape) * tangent.d_v[n]
        ).sum()
        * vol
    )
    rhs = 0.0
    for k in range(n):
        rg = objective.running_grad(
            base.rho1[k], base.rho2[k], base.v[k], ctrl.slice_values(k)
        )
        lhs += float(
            (
                np.broadcast_to(rg[0], grid.shape) * tangent.d_rho1[k]
                + np.broadcast_to(rg[1], grid.shape) * tangent.d_rho2[k]
                + np.broadcast_to(rg[2], grid.shape) * tangent.d_v[k]
            ).sum()
            * vol
            * dt
        )
        # the step's control pairs with the right-endpoint multiplier,
        # matching reduced_gradient
        rhs += float((du[k] * adjoint.adj_v[k + 1]).sum() * vol * dt)
    return abs(lhs - rhs) / (abs(lhs) + abs(rhs) + RESIDUAL_EPS)


@dataclass(frozen=True)
class GradientCheckReport:
    """Adjoint gradient against central finite differences of the reduced
    cost along a batch of directions."""

    fd_values: tuple[float, ...]
    adjoint_values: tuple[float, ...]
    cosine: float
    rel_error: float

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["direction", "fd_derivative", "adjoint_derivative"])
            for i, (a, b) in enumerate(zip(self.fd_values, self.adjoint_values)):
                writer.writerow([i, f"{a:.17g}", f"{b:.17g}"])


def fd_gradient_check(
    u_star: Control,
    init: InitialData,
    p: ModelParams,
    time: TimeGrid,
    objective: Objective,
    n_directions: int = 5,
    fd_step: float = 1e-3,
    seed: int = 0,
    options: LinearSolveOptions = DEFAULT_SOLVE_OPTIONS,
) -> GradientCheckReport:
    """Probe the reduced gradient along random admissible directions.

    Directions are drawn uniformly and scaled so both one-sided probes
    stay inside the box; the base control must therefore be strictly
    interior. Reports the cosine similarity and relative l2 error between
    the vector of finite-difference derivatives and the vector of adjoint
    predictions.
    """
    grid = init.grid
    base_values = u_star.as_spacetime()
    margin = float(min(base_values.min(), u_star.cap - base_values.max()))
    if margin <= 0.0:
        raise ConfigurationError(
            "finite-difference probes need a strictly interior base control"
        )
    rng = np.random.default_rng(seed)
    base_traj = solve_forward(init, u_star, time, p, options)
    adj = solve_adjoint(base_traj, u_star, objective, p, options=options)
    grad = reduced_gradient(adj.adj_v, u_star, objective, base_traj)

    vol = grid.cell_volume
    dt = time.dt
    fd_vals = []
    adj_vals = []
    for _ in range(n_directions):
        d = rng.uniform(-1.0, 1.0, size=(time.steps,) + grid.shape)
        d *= 0.999 * margin / (fd_step * float(np.abs(d).max()))
        hi = Control("space_time", base_values + fd_step * d, u_star.cap, grid, time)
        lo = Control("space_time", base_values - fd_step * d, u_star.cap, grid, time)
        f_hi = eval_J(solve_forward(init, hi, time, p, options), hi, objective)
        f_lo = eval_J(solve_forward(init, lo, time, p, options), lo, objective)
        fd_vals.append((f_hi - f_lo) / (2.0 * fd_step))
        adj_vals.append(float((grad * d).sum() * vol * dt))
    fd_vec = np.array(fd_vals)
    adj_vec = np.array(adj_vals)
    denom = float(np.linalg.norm(fd_vec) * np.linalg.norm(adj_vec))
    cosine = float(fd_vec @ adj_vec) / (denom + RESIDUAL_EPS)
    rel_error = float(
        np.linalg.norm(fd_vec - adj_vec) / (np.linalg.norm(fd_vec) + RESIDUAL_EPS)
    )
    return GradientCheckReport(
        fd_values=tuple(fd_vals),
        adjoint_values=tuple(adj_vals),
        cosine=cosine,
        rel_error=rel_error,
    )
