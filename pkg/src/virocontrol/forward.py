"""Coupled solver for the three-species virotherapy model.

State components: density of uninfected tumor cells (rho1), density of
infected tumor cells (rho2), and free virus concentration (v). All three
diffuse with unit coefficient under zero-flux boundaries; the reactions are

    rho1: growth at rate alpha, death at rate delta1, infection at rate
          beta per unit virus;
    rho2: gain from infection, death (lysis) at rate delta2;
    v:    release of b virions per lysed cell, uptake at rate B per unit
          of uninfected cells, clearance at rate delta_v, plus the
          infusion control u.

Each time step performs three scalar implicit Euler sub-steps with the
coupling coefficients frozen at the current time level: loss terms go
implicit, gain terms explicit. The update maps nonnegative data to
nonnegative data unconditionally; a per-step validator additionally caps
dt times the explicit rate sup at 0.5 so no component can double within a
step.

``solve_forward_picard`` re-solves the same discrete system by iterating
the decoupled map that freezes all couplings at the previous sweep's
trajectory. Its fixed point is the trajectory of ``solve_forward``, which
makes it an independent cross-check of the direct march.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IterationError
from .fields import Field, Grid, TimeGrid, integrate, norm_l2_raw
from .kernel import DEFAULT_SOLVE_OPTIONS, LinearSolveOptions, step_scalar_raw

STEP_RATE_CAP = 0.5

SPACE_TIME = "space_time"
TIME_ONLY = "time_only"


@dataclass(frozen=True)
class ModelParams:
    """The seven positive rate constants plus the control cap."""

    alpha: float
    beta: float
    delta1: float
    delta2: float
    delta_v: float
    b: float
    B: float
    u_cap: float

    def __post_init__(self):
        for name in ("alpha", "beta", "delta1", "delta2", "delta_v", "b", "B", "u_cap"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0.0:
                raise ConfigurationError(
                    f"model rate constants must be fixed positive constants; "
                    f"got {name} = {value}"
                )


@dataclass(frozen=True)
class InitialData:
    """Nonnegative starting fields for the three components."""

    rho1_0: Field
    rho2_0: Field
    v_0: Field

    def __post_init__(self):
        grid = self.rho1_0.grid
        for name in ("rho1_0", "rho2_0", "v_0"):
            f = getattr(self, name)
            if f.grid != grid:
                raise ConfigurationError("initial fields live on different grids")
            if f.values.min() < 0.0:
                raise ConfigurationError(f"initial data must be nonnegative; {name} is not")

    @property
    def grid(self) -> Grid:
        return self.rho1_0.grid


class Control:
    """Infusion rate u, boxed into [0, cap].

    Two admissible-set modes: ``space_time`` stores one value per cell per
    step (shape ``(steps, *grid.shape)``), ``time_only`` stores one scalar
    per step that is broadcast over the domain. Values are sampled at the
    left endpoint of each time step.
    """

    __slots__ = ("mode", "values", "cap", "grid", "time")

    def __init__(self, mode: str, values: np.ndarray, cap: float, grid: Grid, time: TimeGrid):
        if mode not in (SPACE_TIME, TIME_ONLY):
            raise ConfigurationError(f"unknown control mode {mode!r}")
        if cap <= 0.0:
            raise ConfigurationError(f"control cap must be positive, got {cap}")
        arr = np.asarray(values, dtype=np.float64)
        expected = (time.steps,) if mode == TIME_ONLY else (time.steps,) + grid.shape
        if arr.shape != expected:
            raise ConfigurationError(
                f"control values shape {arr.shape} does not match expected {expected}"
            )
        if not np.isfinite(arr).all():
            raise ConfigurationError("control contains non-finite values")
        if arr.min() < -1e-12 or arr.max() > cap * (1.0 + 1e-12) + 1e-300:
            raise ConfigurationError(
                f"control values must lie in [0, {cap}]; "
                f"got range [{arr.min():.6g}, {arr.max():.6g}]"
            )
        # tolerate round-off at the box edge, then pin values exactly inside
        arr = np.clip(arr, 0.0, cap)
        arr.flags.writeable = False
        self.mode = mode
        self.values = arr
        self.cap = float(cap)
        self.grid = grid
        self.time = time

    @classmethod
    def constant(cls, value: float, cap: float, grid: Grid, time: TimeGrid,
                 mode: str = SPACE_TIME) -> "Control":
        if mode == TIME_ONLY:
            vals = np.full(time.steps, float(value))
        else:
            vals = np.full((time.steps,) + grid.shape, float(value))
        return cls(mode, vals, cap, grid, time)

    @classmethod
    def zero(cls, cap: float, grid: Grid, time: TimeGrid, mode: str = SPACE_TIME) -> "Control":
        return cls.constant(0.0, cap, grid, time, mode)

    def slice_values(self, k: int) -> np.ndarray:
        """Control values over the domain during step k."""
        if self.mode == TIME_ONLY:
            return np.broadcast_to(self.values[k], self.grid.shape)
        return self.values[k]

    def as_spacetime(self) -> np.ndarray:
        """Dense (steps, *grid.shape) array regardless of mode."""
        if self.mode == TIME_ONLY:
            shaped = self.values.reshape((self.time.steps,) + (1,) * self.grid.dim)
            return np.broadcast_to(shaped, (self.time.steps,) + self.grid.shape).copy()
        return self.values.copy()


class StateTrajectory:
    """Time-indexed triple of fields on a shared grid and time grid.

    Component arrays have shape ``(steps + 1, *grid.shape)`` and are
    read-only once constructed.
    """

    __slots__ = ("rho1", "rho2", "v", "grid", "time")

    def __init__(self, rho1: np.ndarray, rho2: np.ndarray, v: np.ndarray,
                 grid: Grid, time: TimeGrid):
        expected = (time.steps + 1,) + grid.shape
        for name, arr in (("rho1", rho1), ("rho2", rho2), ("v", v)):
            if arr.shape != expected:
                raise ConfigurationError(
                    f"trajectory component {name} has shape {arr.shape}, "
                    f"expected {expected}"
                )
            if not np.isfinite(arr).all():
                raise ConfigurationError(f"trajectory component {name} is not finite")
        self.rho1 = np.ascontiguousarray(rho1)
        self.rho2 = np.ascontiguousarray(rho2)
        self.v = np.ascontiguousarray(v)
        for arr in (self.rho1, self.rho2, self.v):
            arr.flags.writeable = False
        self.grid = grid
        self.time = time

    def field(self, component: str, k: int) -> Field:
        return Field(self.grid, getattr(self, component)[k], check=False)

    def state_at(self, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.rho1[k], self.rho2[k], self.v[k]


def reaction_rates(r1, r2, v, u, p: ModelParams):
    """Pointwise reaction rates of the three components; works on scalars
    or arrays. The infection term cancels exactly between the first two."""
    infection = p.beta * r1 * v
    f1 = (p.alpha - p.delta1) * r1 - infection
    f2 = infection - p.delta2 * r2
    f3 = p.b * p.delta2 * r2 - p.B * r1 * v - p.delta_v * v + u
    return f1, f2, f3


def _validate_step_rate(dt: float, v_sup: float, r1_sup: float, p: ModelParams) -> None:
    rate = p.delta2 + p.delta_v + p.alpha + p.beta * v_sup + p.B * r1_sup
    if dt * rate > STEP_RATE_CAP:
        raise ConfigurationError(
            f"time step too large: dt*(delta2 + delta_v + alpha + beta*max|v| "
            f"+ B*max|rho1|) = {dt * rate:.4g} exceeds {STEP_RATE_CAP}; "
            f"reduce dt below {STEP_RATE_CAP / rate:.4g}"
        )


def _step_raw(r1, r2, v, u, dt, grid, p, coupling=None, options=DEFAULT_SOLVE_OPTIONS):
    """Three sequential scalar sub-steps with frozen couplings.

    ``coupling`` supplies the (rho1, v) arrays used in the cross terms; it
    defaults to the current state and is overridden by the decoupled
    fixed-point sweep.
    """
    c_r1, c_v = (r1, v) if coupling is None else coupling
    _validate_step_rate(dt, float(np.abs(c_v).max()), float(np.abs(c_r1).max()), p)
    r1_new = step_scalar_raw(r1, p.delta1 + p.beta * c_v, p.alpha * r1, dt, grid, options)
    r2_new = step_scalar_raw(r2, p.delta2, p.beta * c_r1 * c_v, dt, grid, options)
    v_new = step_scalar_raw(
        v, p.delta_v + p.B * c_r1, p.b * p.delta2 * r2 + u, dt, grid, options
    )
    return r1_new, r2_new, v_new


def step_forward(
    state_n: tuple[Field, Field, Field],
    u_n: Field,
    dt: float,
    p: ModelParams,
    options: LinearSolveOptions = DEFAULT_SOLVE_OPTIONS,
) -> tuple[Field, Field, Field]:
    """Advance the coupled state one time step."""
    r1, r2, v = state_n
    grid = r1.grid
    r1_new, r2_new, v_new = _step_raw(
        r1.values, r2.values, v.values, u_n.values, dt, grid, p, options=options
    )
    return Field(grid, r1_new), Field(grid, r2_new), Field(grid, v_new)


def _check_control(ctrl: Control, grid: Grid, time: TimeGrid) -> None:
    if ctrl.grid != grid:
        raise ConfigurationError("control grid does not match the problem grid")
    if ctrl.time != time:
        raise ConfigurationError("control time grid does not match the problem time grid")


def solve_forward(
    init: InitialData,
    ctrl: Control,
    time: TimeGrid,
    p: ModelParams,
    options: LinearSolveOptions = DEFAULT_SOLVE_OPTIONS,
) -> StateTrajectory:
    """March the coupled system over the full horizon."""
    grid = init.grid
    _check_control(ctrl, grid, time)
    n = time.steps
    dt = time.dt
    shape = (n + 1,) + grid.shape
    rho1 = np.empty(shape)
    rho2 = np.empty(shape)
    v = np.empty(shape)
    rho1[0] = init.rho1_0.values
    rho2[0] = init.rho2_0.values
    v[0] = init.v_0.values
    for k in range(n):
        rho1[k + 1], rho2[k + 1], v[k + 1] = _step_raw(
            rho1[k], rho2[k], v[k], ctrl.slice_values(k), dt, grid, p, options=options
        )
    return StateTrajectory(rho1, rho2, v, grid, time)


def solve_forward_picard(
    init: InitialData,
    ctrl: Control,
    time: TimeGrid,
    p: ModelParams,
    max_iter: int = 50,
    tol: float = 1e-10,
    options: LinearSolveOptions = DEFAULT_SOLVE_OPTIONS,
) -> StateTrajectory:
    """Solve by iterating the decoupled map until the sweep is a fixed point.

    Each sweep re-solves the three scalar problems with every coupling
    frozen at the previous sweep's trajectory; successive sweeps must
    differ by less than ``tol`` in sup-over-time L2, summed over
    components. Raises IterationError when the horizon is too long for
    the map to contract within ``max_iter`` sweeps.
    """
    grid = init.grid
    _check_control(ctrl, grid, time)
    n = time.steps
    dt = time.dt
    shape = (n + 1,) + grid.shape
    prev = np.empty((3,) + shape)
    prev[0] = init.rho1_0.values
    prev[1] = init.rho2_0.values
    prev[2] = init.v_0.values

    increment = math.inf
    for sweep in range(1, max_iter + 1):
        cur = np.empty_like(prev)
        cur[:, 0] = prev[:, 0]
        for k in range(n):
            cur[0, k + 1], cur[1, k + 1], cur[2, k + 1] = _step_raw(
                cur[0, k], cur[1, k], cur[2, k], ctrl.slice_values(k), dt, grid, p,
                coupling=(prev[0, k], prev[2, k]), options=options,
            )
        increment = sum(
            max(norm_l2_raw(cur[i, k] - prev[i, k], grid) for k in range(n + 1))
            for i in range(3)
        )
        prev = cur
        if increment < tol:
            return StateTrajectory(prev[0], prev[1], prev[2], grid, time)
    raise IterationError(
        f"decoupled fixed-point sweep did not contract below {tol:.3e} "
        f"within {max_iter} sweeps (last increment {increment:.3e})",
        last_increment=increment,
        iterations=max_iter,
    )


@dataclass(frozen=True)
class ComponentBound:
    """Observed range of one component against its growth envelope."""

    name: str
    bound: float
    max_value: float
    min_value: float
    slack: float
    passes: bool
    worst_index: tuple  # (time level, *cell index) of the extreme value


@dataclass(frozen=True)
class BoundsReport:
    rho1: ComponentBound
    rho2: ComponentBound
    v: ComponentBound

    @property
    def passes(self) -> bool:
        return self.rho1.passes and self.rho2.passes and self.v.passes


NEGATIVITY_TOL = 1e-12
BOUND_REL_TOL = 1e-6


def growth_envelopes(init: InitialData, p: ModelParams, u_cap: float, t_final: float):
    """Ceilings implied by the model structure: rho1 grows at most at the
    net rate |alpha - delta1|; rho1 + rho2 at most at rate alpha; v by
    accumulating the released and infused virus over the horizon."""
    r1_sup = float(init.rho1_0.values.max())
    r2_sup = float(init.rho2_0.values.max())
    v_sup = float(init.v_0.values.max())
    env1 = r1_sup * math.exp(abs(p.alpha - p.delta1) * t_final)
    env2 = (r1_sup + r2_sup) * math.exp(p.alpha * t_final)
    env3 = v_sup + (p.b * p.delta2 * (r1_sup + r2_sup) * math.exp(p.alpha * t_final)
                    + u_cap) * t_final
    return env1, env2, env3


def _component_bound(name: str, values: np.ndarray, bound: float) -> ComponentBound:
    max_value = float(values.max())
    min_value = float(values.min())
    ok = min_value >= -NEGATIVITY_TOL and max_value <= bound * (1.0 + BOUND_REL_TOL)
    # locate the worst offender: the most negative cell if negativity fails,
    # otherwise the overall maximum
    if min_value < -NEGATIVITY_TOL:
        flat = int(values.argmin())
    else:
        flat = int(values.argmax())
    worst = tuple(int(i) for i in np.unravel_index(flat, values.shape))
    return ComponentBound(
        name=name,
        bound=bound,
        max_value=max_value,
        min_value=min_value,
        slack=bound - max_value,
        passes=ok,
        worst_index=worst,
    )


def verify_bounds(
    traj: StateTrajectory, init: InitialData, p: ModelParams, u_cap: float
) -> BoundsReport:
    """Check nonnegativity and the growth envelopes over the whole
    trajectory; failures are reported, not raised."""
    env1, env2, env3 = growth_envelopes(init, p, u_cap, traj.time.t_final)
    return BoundsReport(
        rho1=_component_bound("rho1", traj.rho1, env1),
        rho2=_component_bound("rho2", traj.rho2, env2),
        v=_component_bound("v", traj.v, env3),
    )


def export_timeseries(traj: StateTrajectory, path: str | Path) -> None:
    """CSV of per-time-level masses and ranges of the three components."""
    times = traj.time.times()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "t", "mass_rho1", "mass_rho2", "mass_v",
            "min_rho1", "max_rho1", "min_rho2", "max_rho2", "min_v", "max_v",
        ])
        for k, t in enumerate(times):
            row = [
                t,
                integrate(traj.field("rho1", k)),
                integrate(traj.field("rho2", k)),
                integrate(traj.field("v", k)),
                traj.rho1[k].min(), traj.rho1[k].max(),
                traj.rho2[k].min(), traj.rho2[k].max(),
                traj.v[k].min(), traj.v[k].max(),
            ]
            writer.writerow([f"{x:.17g}" for x in row])
