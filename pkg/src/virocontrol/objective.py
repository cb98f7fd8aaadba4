"""Cost functionals over trajectories and their pointwise derivatives.

Every objective is a terminal cost integrated over the domain at the final
time plus a running cost integrated over space-time:

    J = int terminal(rho1, rho2, v)(T) dx
      + int_0^T int running(rho1, rho2, v, u) dx dt.

Quadrature matches the state discretization: midpoint in space,
left-endpoint in time, so the evaluated functional is exactly the one the
adjoint-based gradient differentiates through first order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .fields import Field, TimeGrid
from .forward import Control, InitialData, ModelParams, StateTrajectory, solve_forward
from .kernel import DEFAULT_SOLVE_OPTIONS, LinearSolveOptions


class Objective:
    """Base interface: terminal/running costs and their partials.

    Methods are vectorized; arguments may be scalars or arrays of a common
    broadcastable shape. ``terminal_grad`` returns the three partials of
    the terminal cost, ``running_grad`` the four partials (three state,
    one control) of the running cost.
    """

    def terminal(self, r1, r2, v):
        raise NotImplementedError

    def running(self, r1, r2, v, u):
        raise NotImplementedError

    def terminal_grad(self, r1, r2, v):
        raise NotImplementedError

    def running_grad(self, r1, r2, v, u):
        raise NotImplementedError


def _check_weight(name: str, value: float) -> float:
    if value < 0.0 or not math.isfinite(value):
        raise ConfigurationError(f"objective weight {name} must be >= 0, got {value}")
    return float(value)


def _check_exponent(p: float) -> float:
    if p < 1.0 or not math.isfinite(p):
        raise ConfigurationError(f"dose exponent must satisfy p >= 1, got {p}")
    return float(p)


def _dose_derivative(u, p: float):
    # p * u^(p-1); exact power of one gives the constant derivative 1
    if p == 1.0:
        return np.ones_like(np.asarray(u, dtype=np.float64))
    return p * np.asarray(u, dtype=np.float64) ** (p - 1.0)


@dataclass(frozen=True)
class TerminalMass(Objective):
    """Weighted final tumor burden: gamma1 * rho1(T) + gamma2 * rho2(T)."""

    gamma1: float
    gamma2: float

    def __post_init__(self):
        _check_weight("gamma1", self.gamma1)
        _check_weight("gamma2", self.gamma2)

    def terminal(self, r1, r2, v):
        return self.gamma1 * r1 + self.gamma2 * r2

    def running(self, r1, r2, v, u):
        return np.zeros(np.broadcast(r1, u).shape)

    def terminal_grad(self, r1, r2, v):
        shape = np.broadcast(r1, r2, v).shape
        return (
            np.full(shape, self.gamma1),
            np.full(shape, self.gamma2),
            np.zeros(shape),
        )

    def running_grad(self, r1, r2, v, u):
        shape = np.broadcast(r1, r2, v, u).shape
        z = np.zeros(shape)
        return z, z, z, z


@dataclass(frozen=True)
class TerminalMassPlusDose(Objective):
    """Final tumor burden plus the accumulated dose u^p."""

    gamma1: float
    gamma2: float
    p: float

    def __post_init__(self):
        _check_weight("gamma1", self.gamma1)
        _check_weight("gamma2", self.gamma2)
        _check_exponent(self.p)

    def terminal(self, r1, r2, v):
        return self.gamma1 * r1 + self.gamma2 * r2

    def running(self, r1, r2, v, u):
        return np.broadcast_to(
            np.asarray(u, dtype=np.float64) ** self.p, np.broadcast(r1, u).shape
        ).copy()

    def terminal_grad(self, r1, r2, v):
        shape = np.broadcast(r1, r2, v).shape
        return (
            np.full(shape, self.gamma1),
            np.full(shape, self.gamma2),
            np.zeros(shape),
        )

    def running_grad(self, r1, r2, v, u):
        shape = np.broadcast(r1, r2, v, u).shape
        z = np.zeros(shape)
        du = np.broadcast_to(_dose_derivative(u, self.p), shape).copy()
        return z, z, z, du


@dataclass(frozen=True)
class ChronicTracking(Objective):
    """Hold the uninfected density near a target profile, with dose cost.

    Terminal and running costs both track (rho1 - target)^2; the running
    cost adds u^p. State arguments must be shaped like the target field.
    """

    target: Field
    p: float

    def __post_init__(self):
        _check_exponent(self.p)

    def terminal(self, r1, r2, v):
        d = r1 - self.target.values
        return d * d

    def running(self, r1, r2, v, u):
        d = r1 - self.target.values
        return d * d + np.asarray(u, dtype=np.float64) ** self.p

    def terminal_grad(self, r1, r2, v):
        d = 2.0 * (r1 - self.target.values)
        return d, np.zeros_like(d), np.zeros_like(d)

    def running_grad(self, r1, r2, v, u):
        d = 2.0 * (r1 - self.target.values)
        z = np.zeros_like(d)
        du = np.broadcast_to(_dose_derivative(u, self.p), d.shape).copy()
        return d, z, z, du


class CustomObjective(Objective):
    """User-supplied costs with analytically supplied gradients.

    ``terminal_fn(r1, r2, v)`` and ``running_fn(r1, r2, v, u)`` must be
    vectorized; ``terminal_grad_fn`` returns three arrays, and
    ``running_grad_fn`` four. The supplied gradients are checked once at
    construction against central finite differences at random points
    (relative tolerance 1e-5); a failing check raises immediately so bad
    gradients can never reach the adjoint solver.
    """

    _FD_STEP = 1e-6
    _FD_TOL = 1e-5
    _N_POINTS = 10

    def __init__(self, terminal_fn, running_fn, terminal_grad_fn, running_grad_fn,
                 check_seed: int = 0):
        self._terminal = terminal_fn
        self._running = running_fn
        self._terminal_grad = terminal_grad_fn
        self._running_grad = running_grad_fn
        self._self_check(check_seed)

    def terminal(self, r1, r2, v):
        return np.asarray(self._terminal(r1, r2, v), dtype=np.float64)

    def running(self, r1, r2, v, u):
        return np.asarray(self._running(r1, r2, v, u), dtype=np.float64)

    def terminal_grad(self, r1, r2, v):
        g = self._terminal_grad(r1, r2, v)
        return tuple(np.asarray(gi, dtype=np.float64) for gi in g)

    def running_grad(self, r1, r2, v, u):
        g = self._running_grad(r1, r2, v, u)
        return tuple(np.asarray(gi, dtype=np.float64) for gi in g)

    def _self_check(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        pts = rng.uniform(0.1, 1.0, size=(self._N_POINTS, 4))
        h = self._FD_STEP

        def fd(fn, args, i):
            hi = list(args)
            lo = list(args)
            hi[i] = hi[i] + h
            lo[i] = lo[i] - h
            return (np.asarray(fn(*hi)) - np.asarray(fn(*lo))) / (2.0 * h)

        r1, r2, v, u = (pts[:, i] for i in range(4))
        analytic_t = self.terminal_grad(r1, r2, v)
        analytic_r = self.running_grad(r1, r2, v, u)
        for i in range(3):
            approx = fd(self._terminal, (r1, r2, v), i)
            if not np.allclose(analytic_t[i], approx, rtol=self._FD_TOL, atol=self._FD_TOL):
                raise ConfigurationError(
                    f"custom objective: terminal gradient component {i} disagrees "
                    f"with finite differences"
                )
        for i in range(4):
            approx = fd(self._running, (r1, r2, v, u), i)
            if not np.allclose(analytic_r[i], approx, rtol=self._FD_TOL, atol=self._FD_TOL):
                raise ConfigurationError(
                    f"custom objective: running gradient component {i} disagrees "
                    f"with finite differences"
                )


def cost_partials(state_point, u_value, obj: Objective):
    """All seven partial derivatives at one state/control point: the three
    terminal-cost partials followed by the four running-cost partials."""
    r1, r2, v = state_point
    t1, t2, t3 = obj.terminal_grad(r1, r2, v)
    g1, g2, g3, gu = obj.running_grad(r1, r2, v, u_value)
    return t1, t2, t3, g1, g2, g3, gu


def eval_J(traj: StateTrajectory, ctrl: Control, obj: Objective) -> float:
    """Evaluate the functional on a trajectory/control pair."""
    if ctrl.grid != traj.grid or ctrl.time != traj.time:
        raise ConfigurationError("control and trajectory grids do not match")
    grid = traj.grid
    n = traj.time.steps
    last = n
    terminal = obj.terminal(traj.rho1[last], traj.rho2[last], traj.v[last])
    total = float(np.asarray(terminal).sum() * grid.cell_volume)
    dt = traj.time.dt
    for k in range(n):
        running = obj.running(traj.rho1[k], traj.rho2[k], traj.v[k], ctrl.slice_values(k))
        total += float(np.asarray(running).sum() * grid.cell_volume) * dt
    return total


def eval_reduced(
    u: Control,
    init: InitialData,
    p: ModelParams,
    time: TimeGrid,
    obj: Objective,
    options: LinearSolveOptions = DEFAULT_SOLVE_OPTIONS,
) -> float:
    """The reduced cost: solve the state for u, then evaluate the functional.
    This is the map the optimizer minimizes."""
    traj = solve_forward(init, u, time, p, options)
    return eval_J(traj, u, obj)
