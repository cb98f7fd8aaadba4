"""Independent reference computations used by the tests.

These deliberately avoid the package's solver paths: the ODE integrators
are hand-rolled RK4 on the pointwise rate equations, and the one-step
reference applies the split update formulas directly in scalar arithmetic.
"""

from __future__ import annotations

import numpy as np


def rk4_uniform_state(y0, u, t_final, n_steps, alpha, beta, delta1, delta2,
                      delta_v, b, B):
    """Fixed-step RK4 on the spatially uniform three-component system.

    Plain-float arithmetic keeps a million steps affordable.
    """
    r1, r2, v = (float(c) for c in y0)
    h = t_final / n_steps

    def rates(r1, r2, v):
        infection = beta * r1 * v
        return (
            (alpha - delta1) * r1 - infection,
            infection - delta2 * r2,
            b * delta2 * r2 - B * r1 * v - delta_v * v + u,
        )

    for _ in range(n_steps):
        k1 = rates(r1, r2, v)
        k2 = rates(r1 + 0.5 * h * k1[0], r2 + 0.5 * h * k1[1], v + 0.5 * h * k1[2])
        k3 = rates(r1 + 0.5 * h * k2[0], r2 + 0.5 * h * k2[1], v + 0.5 * h * k2[2])
        k4 = rates(r1 + h * k3[0], r2 + h * k3[1], v + h * k3[2])
        r1 += h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        r2 += h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        v += h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return r1, r2, v


def rk4_linear_backward(terminal, matrix, source, t_final, n_steps):
    """RK4 for a linear system integrated backward from ``terminal``:
    -y'(t) = A y(t) + s, so y(t) for t < t_final. Returns y(0)."""
    A = np.asarray(matrix, dtype=float)
    s = np.asarray(source, dtype=float)
    y = np.asarray(terminal, dtype=float).copy()
    h = t_final / n_steps

    def f(y):
        return A @ y + s

    # substitute tau = t_final - t: dy/dtau = A y + s
    for _ in range(n_steps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def split_step_uniform(r1, r2, v, u, dt, p):
    """One step of the sequential split update on uniform data, written as
    the three scalar closed forms (diffusion of a uniform field vanishes)."""
    r1_new = r1 * (1.0 + dt * p.alpha) / (1.0 + dt * (p.delta1 + p.beta * v))
    r2_new = (r2 + dt * p.beta * r1 * v) / (1.0 + dt * p.delta2)
    v_new = (v + dt * (p.b * p.delta2 * r2 + u)) / (1.0 + dt * (p.delta_v + p.B * r1))
    return r1_new, r2_new, v_new


def smooth_bump(grid, center, width, amplitude):
    """Gaussian bump values on a grid (test data helper)."""
    coords = grid.cell_centers()
    sq = sum((c - x0) ** 2 for c, x0 in zip(coords, center))
    return amplitude * np.exp(-sq / (2.0 * width ** 2))
