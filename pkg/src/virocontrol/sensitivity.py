"""Directional derivatives of the control-to-state map.

The tangent system is the forward model linearized along a base
trajectory, with zero initial data; a control perturbation enters only the
virus equation. It is discretized with the same per-step pattern as the
forward solver (diffusion and loss implicit, gains and cross couplings
explicit, all coefficients frozen at the current time level of the base
trajectory), so finite differences of the forward solver converge to its
output at first order in the perturbation size until the time-step floor.
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


class LinearizedCoefficients:
    """Reaction-rate Jacobian along a base trajectory.

    ``jacobian_at(k)`` returns the 3x3 entries (arrays or scalars) of the
    derivative of the reaction rates with respect to (rho1, rho2, v),
    evaluated pointwise at time level k of the base trajectory. Entries
    that vanish identically are returned as 0.0.
    """

    __slots__ = ("rho1", "v", "p", "grid", "time")

    def __init__(self, base: StateTrajectory, p: ModelParams):
        self.rho1 = base.rho1
        self.v = base.v
        self.p = p
        self.grid = base.grid
        self.time = base.time

    def jacobian_at(self, k: int):
        p = self.p
        r1 = self.rho1[k]
        v = self.v[k]
        return (
            (p.alpha - p.delta1 - p.beta * v, 0.0, -p.beta * r1),
            (p.beta * v, -p.delta2, p.beta * r1),
            (-p.B * v, p.b * p.delta2, -p.B * r1 - p.delta_v),
        )


def linearize_coeffs(base: StateTrajectory, p: ModelParams) -> LinearizedCoefficients:
    return LinearizedCoefficients(base, p)


class TangentTrajectory:
    """Directional derivative (d_rho1, d_rho2, d_v) of the state; starts
    from identically zero fields."""

    __slots__ = ("d_rho1", "d_rho2", "d_v", "grid", "time")

    def __init__(self, d_rho1, d_rho2, d_v, grid: Grid, time: TimeGrid):
        self.d_rho1 = d_rho1
        self.d_rho2 = d_rho2
        self.d_v = d_v
        self.grid = grid
        self.time = time
        for name in ("d_rho1", "d_rho2", "d_v"):
            arr = getattr(self, name)
            if not np.isfinite(arr).all():
                raise ConfigurationError(f"tangent component {name} is not finite")
            arr.flags.writeable = False

    def field(self, component: str, k: int) -> Field:
        return Field(self.grid, getattr(self, component)[k], check=False)


# explicit own-equation gain rates, mirroring the forward splitting:
# rho1 grows at alpha, the other two have no explicit self-gain
def _own_gains(p: ModelParams):
    return (p.alpha, 0.0, 0.0)


def _delta_u_per_step(delta_u, time: TimeGrid, grid: Grid) -> np.ndarray:
    arr = np.asarray(delta_u, dtype=np.float64)
    if arr.shape == (time.steps,):
        arr = np.broadcast_to(
            arr.reshape((time.steps,) + (1,) * grid.dim), (time.steps,) + grid.shape
        )
    if arr.shape != (time.steps,) + grid.shape:
        raise ConfigurationError(
            f"control perturbation shape {arr.shape} does not match "
            f"({time.steps}, {grid.shape})"
        )
    return arr


def solve_linearized(
    coeffs: LinearizedCoefficients,
    delta_u,
    time: TimeGrid,
    p: ModelParams,
    options: LinearSolveOptions = DEFAULT_SOLVE_OPTIONS,
) -> TangentTrajectory:
    """Propagate a control perturbation through the linearized dynamics.

    ``delta_u`` is a bare array of per-step values, shape
    ``(steps, *grid.shape)`` or ``(steps,)``; it may take either sign.
    """
    grid = coeffs.grid
    if time != coeffs.time:
        raise ConfigurationError("time grid does not match the base trajectory")
    du = _delta_u_per_step(delta_u, time, grid)
    n = time.steps
    dt = time.dt
    gains = _own_gains(p)
    shape = (n + 1,) + grid.shape
    tang = [np.zeros(shape), np.zeros(shape), np.zeros(shape)]
    for k in range(n):
        jac = coeffs.jacobian_at(k)
        cur = [tang[i][k] for i in range(3)]
        for i in range(3):
            c = gains[i] - jac[i][i]
            f = gains[i] * cur[i]
            for j in range(3):
                if j != i:
                    f = f + jac[i][j] * cur[j]
            if i == 2:
                f = f + du[k]
            tang[i][k + 1] = step_scalar_raw(cur[i], c, f, dt, grid, options)
    return TangentTrajectory(tang[0], tang[1], tang[2], grid, time)


@dataclass(frozen=True)
class ConvergenceReport:
    """Finite-difference consistency data: per-probe-size errors and the
    ratios between consecutive sizes."""

    lambdas: tuple[float, ...]
    errors: tuple[float, ...]
    ratios: tuple[float, ...]
    floor_reached: bool

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lambda", "error", "ratio"])
            for i, (lam, err) in enumerate(zip(self.lambdas, self.errors)):
                ratio = self.ratios[i - 1] if i > 0 else ""
                writer.writerow([
                    f"{lam:.17g}", f"{err:.17g}",
                    f"{ratio:.17g}" if ratio != "" else "",
                ])


_FLOOR_RATIO = 1.5


def _trajectory_distance(scaled, tangent: TangentTrajectory) -> float:
    """Sum over components of sup-over-time L2 distance between the scaled
    state difference and the tangent."""
    total = 0.0
    grid = tangent.grid
    for arr_diff, tang in (
        (scaled[0], tangent.d_rho1),
        (scaled[1], tangent.d_rho2),
        (scaled[2], tangent.d_v),
    ):
        total += max(
            norm_l2_raw(arr_diff[k] - tang[k], grid) for k in range(arr_diff.shape[0])
        )
    return total


def directional_derivative_check(
    u_star: Control,
    delta_u,
    lambdas,
    init: InitialData,
    p: ModelParams,
    time: TimeGrid,
    options: LinearSolveOptions = DEFAULT_SOLVE_OPTIONS,
) -> ConvergenceReport:
    """Compare finite differences of the forward map against the tangent.

    For each probe size, solves the forward model at the perturbed control
    and reports the sup-over-time L2 distance between the difference
    quotient and the tangent trajectory. Every probe control must be
    admissible; an infeasible probe raises instead of being projected,
    since projection would break the differentiability being measured.
    """
    grid = init.grid
    du = _delta_u_per_step(delta_u, time, grid)
    base_values = u_star.as_spacetime()
    lambdas = tuple(float(l) for l in lambdas)
    for lam in lambdas:
        probe = base_values + lam * du
        if probe.min() < -1e-12 or probe.max() > u_star.cap * (1.0 + 1e-12):
            raise ConfigurationError(
                f"probe control at lambda={lam} leaves [0, {u_star.cap}]; "
                f"choose an interior base control or a smaller perturbation"
            )
    base_traj = solve_forward(init, u_star, time, p, options)
    coeffs = linearize_coeffs(base_traj, p)
    tangent = solve_linearized(coeffs, du, time, p, options)
    errors = []
    for lam in lambdas:
        probe_ctrl = Control(
            "space_time", base_values + lam * du, u_star.cap, grid, time
        )
        probe_traj = solve_forward(init, probe_ctrl, time, p, options)
        scaled = (
            (probe_traj.rho1 - base_traj.rho1) / lam,
            (probe_traj.rho2 - base_traj.rho2) / lam,
            (probe_traj.v - base_traj.v) / lam,
        )
        errors.append(_trajectory_distance(scaled, tangent))
    ratios = tuple(
        errors[i] / errors[i + 1] if errors[i + 1] > 0.0 else math.inf
        for i in range(len(errors) - 1)
    )
    floor = any(r < _FLOOR_RATIO for r in ratios)
    return ConvergenceReport(
        lambdas=lambdas, errors=tuple(errors), ratios=ratios, floor_reached=floor
    )


def tangent_bound_ratio(tangent: TangentTrajectory, delta_u) -> float:
    """Ratio of the tangent's summed sup-over-time L2 norms to the
    space-time L2 norm of the driving perturbation."""
    grid = tangent.grid
    du = _delta_u_per_step(delta_u, tangent.time, grid)
    du_norm = spacetime_norm_l2(du, grid, tangent.time.dt)
    if du_norm == 0.0:
        raise ConfigurationError("perturbation is identically zero")
    total = 0.0
    for arr in (tangent.d_rho1, tangent.d_rho2, tangent.d_v):
        total += max(norm_l2_raw(arr[k], grid) for k in range(arr.shape[0]))
    return total / du_norm
