"""Backward Euler solver for scalar linear reaction-diffusion problems.

One step advances ``du/dt = lap(u) - c*u + f`` with zero-flux boundaries by

    (I - dt*lap + dt*c_plus) u_next = u + dt*(f - c_minus*u),

where ``c_plus = max(c, 0)`` and ``c_minus = min(c, 0)``. Decay goes
implicit, which keeps the system matrix symmetric positive definite and an
M-matrix; growth goes explicit, which keeps the update a nonnegative
combination of nonnegative data. The linear system is solved matrix-free
by Jacobi-preconditioned conjugate gradients, warm-started from the
current value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, SolverError
from .fields import (
    Field,
    Grid,
    TimeGrid,
    diffusion_diagonal,
    laplacian_raw,
    norm_l2_raw,
)


@dataclass(frozen=True)
class LinearSolveOptions:
    """Tolerance is on the relative residual; max_iterations of None means
    ten times the cell count."""

    tolerance: float = 1e-10
    max_iterations: int | None = None

    def __post_init__(self):
        if not 0.0 < self.tolerance < 1.0:
            raise ConfigurationError(
                f"linear solve tolerance must lie in (0, 1), got {self.tolerance}"
            )
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigurationError(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )

    def iteration_cap(self, n_cells: int) -> int:
        return self.max_iterations if self.max_iterations is not None else 10 * n_cells


DEFAULT_SOLVE_OPTIONS = LinearSolveOptions()


def _pcg(matvec, b, diag, x0, tolerance, max_iterations):
    """Preconditioned conjugate gradients for an SPD operator."""
    b_norm = math.sqrt(float((b * b).sum()))
    if b_norm == 0.0:
        return np.zeros_like(b)
    x = x0.copy()
    r = b - matvec(x)
    res = math.sqrt(float((r * r).sum()))
    if res <= tolerance * b_norm:
        return x
    z = r / diag
    p = z.copy()
    rz = float((r * z).sum())
    for _ in range(max_iterations):
        q = matvec(p)
        alpha = rz / float((p * q).sum())
        x += alpha * p
        r -= alpha * q
        res = math.sqrt(float((r * r).sum()))
        if res <= tolerance * b_norm:
            return x
        z = r / diag
        rz_new = float((r * z).sum())
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"conjugate gradients stalled at relative residual {res / b_norm:.3e} "
        f"after {max_iterations} iterations",
        residual=res / b_norm,
        iterations=max_iterations,
    )


def step_scalar_raw(
    u: np.ndarray,
    c: np.ndarray | float,
    f: np.ndarray | float,
    dt: float,
    grid: Grid,
    options: LinearSolveOptions = DEFAULT_SOLVE_OPTIONS,
) -> np.ndarray:
    """One implicit Euler step on bare arrays. See the module docstring."""
    if dt <= 0.0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    c = np.asarray(c, dtype=np.float64)
    c_neg_sup = float(max(0.0, -c.min())) if c.size else 0.0
    if dt * c_neg_sup > 1.0:
        raise ConfigurationError(
            f"time step too large for the explicit growth part: "
            f"dt*max(-c) = {dt * c_neg_sup:.3e} exceeds 1"
        )
    if c.ndim == 0 and float(c) >= 0.0:
        rhs = u + dt * np.asarray(f, dtype=np.float64)
        scale = 1.0 + dt * float(c)
    else:
        c_plus = np.maximum(c, 0.0)
        c_minus = np.minimum(c, 0.0)
        rhs = u + dt * (np.asarray(f, dtype=np.float64) - c_minus * u)
        scale = 1.0 + dt * c_plus

    def matvec(x):
        return scale * x - dt * laplacian_raw(x, grid)

    diag = dt * diffusion_diagonal(grid) + scale
    return _pcg(
        matvec,
        np.ascontiguousarray(np.broadcast_to(rhs, u.shape)),
        diag,
        u,
        options.tolerance,
        options.iteration_cap(grid.n_cells),
    )


def step_scalar(
    u_n: Field,
    c_n: Field,
    f_n: Field,
    dt: float,
    options: LinearSolveOptions = DEFAULT_SOLVE_OPTIONS,
) -> Field:
    """Advance one implicit Euler step; returns the new field."""
    grid = u_n.grid
    out = step_scalar_raw(u_n.values, c_n.values, f_n.values, dt, grid, options)
    return Field(grid, out)


def _per_step(coeff, steps: int) -> list[np.ndarray]:
    """Normalize a Field or sequence of Fields to one value array per step."""
    if isinstance(coeff, Field):
        return [coeff.values] * steps
    seq = list(coeff)
    if len(seq) not in (steps, steps + 1):
        raise ConfigurationError(
            f"need a coefficient for each of {steps} steps, got {len(seq)}"
        )
    return [c.values for c in seq[:steps]]


@dataclass(frozen=True)
class ScalarParabolicProblem:
    """Initial data, reaction coefficient, and source for a scalar solve.

    ``reaction`` and ``source`` may each be a single Field (constant in
    time) or a sequence of Fields sampled at the left endpoint of every
    time step.
    """

    initial: Field
    reaction: Field | Sequence[Field]
    source: Field | Sequence[Field]
    time: TimeGrid


def solve_scalar(
    problem: ScalarParabolicProblem,
    options: LinearSolveOptions = DEFAULT_SOLVE_OPTIONS,
) -> list[Field]:
    """March the problem over its time grid; returns steps+1 fields."""
    grid = problem.initial.grid
    n = problem.time.steps
    dt = problem.time.dt
    cs = _per_step(problem.reaction, n)
    fs = _per_step(problem.source, n)
    out = [problem.initial]
    u = problem.initial.values
    for k in range(n):
        u = step_scalar_raw(u, cs[k], fs[k], dt, grid, options)
        out.append(Field(grid, u))
    return out


def max_principle_bound(g_sup: float, f_sup: float, c_inf_norm: float, t: float) -> float:
    """Ceiling on the solution for nonnegative data g, f and reaction with
    sup-norm ``c_inf_norm``: exponential growth at rate ``c_inf_norm``, or
    linear accumulation of the source when the reaction vanishes."""
    if g_sup < 0.0 or f_sup < 0.0 or c_inf_norm < 0.0 or t < 0.0:
        raise ConfigurationError(
            "max_principle_bound needs nonnegative arguments, got "
            f"({g_sup}, {f_sup}, {c_inf_norm}, {t})"
        )
    if c_inf_norm == 0.0:
        return g_sup + f_sup * t
    ratio = f_sup / c_inf_norm
    return (g_sup + ratio) * math.exp(c_inf_norm * t) - ratio


@dataclass(frozen=True)
class StabilityReport:
    """Per-step left and right sides of the source-stability estimate."""

    lhs: np.ndarray
    rhs: np.ndarray
    max_ratio: float
    passes: bool


def stability_gap(
    traj1: Sequence[Field],
    traj2: Sequence[Field],
    f1: Field | Sequence[Field],
    f2: Field | Sequence[Field],
    c_norm: float,
    time: TimeGrid,
) -> StabilityReport:
    """Check that the squared L2 gap of two solves with shared initial data
    and reaction is controlled by the accumulated squared source gap,
    amplified by exp(2*c_o*t) with c_o = max(1, c_norm)."""
    if len(traj1) != len(traj2):
        raise ConfigurationError("trajectories have different lengths")
    if len(traj1) != time.steps + 1:
        raise ConfigurationError(
            f"trajectory length {len(traj1)} does not match time grid "
            f"({time.steps + 1} levels)"
        )
    grid = traj1[0].grid
    if grid != traj2[0].grid:
        raise ConfigurationError("trajectories live on different grids")
    if not np.array_equal(traj1[0].values, traj2[0].values):
        raise ConfigurationError("trajectories must share initial data")
    n = time.steps
    dt = time.dt
    fs1 = _per_step(f1, n)
    fs2 = _per_step(f2, n)
    c_o = max(1.0, float(c_norm))
    lhs = np.empty(n + 1)
    rhs = np.empty(n + 1)
    acc = 0.0
    lhs[0] = 0.0
    rhs[0] = 0.0
    for k in range(n):
        acc += dt * norm_l2_raw(fs1[k] - fs2[k], grid) ** 2
        gap = norm_l2_raw(traj1[k + 1].values - traj2[k + 1].values, grid)
        lhs[k + 1] = gap * gap
        rhs[k + 1] = math.exp(2.0 * c_o * (k + 1) * dt) * acc
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(rhs > 0.0, lhs / rhs, np.where(lhs > 0.0, np.inf, 0.0))
    max_ratio = float(ratios.max())
    return StabilityReport(lhs=lhs, rhs=rhs, max_ratio=max_ratio, passes=max_ratio <= 1.0 + 1e-9)
