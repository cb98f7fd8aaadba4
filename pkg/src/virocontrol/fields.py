"""Cell-centered rectangular grids, scalar fields, and discrete calculus.

All unknowns live at cell centers of a uniform rectangular mesh in one or
two space dimensions. The Laplacian uses the second-order central stencil
with mirror ghost cells, which realizes zero-flux boundaries and keeps the
discrete operator exactly symmetric, negative semi-definite, and
conservative: the cell-volume-weighted sum of ``laplacian_apply(f)``
vanishes to round-off for every field ``f``.

Quadrature is the midpoint rule (value times cell volume), exact for
fields that are constant or linear per axis.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError

_MIN_CELLS_PER_AXIS = 4


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular mesh; ``spacing[i] = extents[i] / cells_per_axis[i]``."""

    dim: int
    extents: tuple[float, ...]
    cells_per_axis: tuple[int, ...]
    spacing: tuple[float, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells_per_axis

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells_per_axis))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_centers(self, axis: int) -> np.ndarray:
        """Coordinates of cell centers along one axis."""
        h = self.spacing[axis]
        return (np.arange(self.cells_per_axis[axis]) + 0.5) * h

    def cell_centers(self) -> list[np.ndarray]:
        """Meshgrid (ij indexing) of cell-center coordinates, one array per axis."""
        axes = [self.axis_centers(ax) for ax in range(self.dim)]
        return list(np.meshgrid(*axes, indexing="ij"))


def build_grid(dim: int, extents: Sequence[float], cells_per_axis: Sequence[int]) -> Grid:
    """Build a uniform rectangular grid.

    Raises ConfigurationError for dimensions other than 1 or 2, non-positive
    extents, or fewer than 4 cells along any axis.
    """
    if dim not in (1, 2):
        raise ConfigurationError(f"grid dim must be 1 or 2, got {dim}")
    extents = tuple(float(e) for e in extents)
    cells = tuple(int(c) for c in cells_per_axis)
    if len(extents) != dim or len(cells) != dim:
        raise ConfigurationError(
            f"extents and cells_per_axis must have length {dim}, "
            f"got {len(extents)} and {len(cells)}"
        )
    for e in extents:
        if not np.isfinite(e) or e <= 0.0:
            raise ConfigurationError(f"extents must be positive, got {extents}")
    for c in cells:
        if c < _MIN_CELLS_PER_AXIS:
            raise ConfigurationError(
                f"need at least {_MIN_CELLS_PER_AXIS} cells per axis, got {cells}"
            )
    spacing = tuple(e / c for e, c in zip(extents, cells))
    return Grid(dim=dim, extents=extents, cells_per_axis=cells, spacing=spacing)


class Field:
    """Immutable scalar grid function, one value per cell.

    Values are stored as a read-only array of shape ``grid.shape``. Every
    constructed field is checked to be finite; operations that would
    produce NaN or infinity fail loudly instead of propagating them.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values: np.ndarray, *, check: bool = True):
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != grid.shape:
            raise ConfigurationError(
                f"field shape {arr.shape} does not match grid shape {grid.shape}"
            )
        if check and not np.isfinite(arr).all():
            raise ConfigurationError("field contains non-finite values")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Field is immutable")

    @classmethod
    def full(cls, grid: Grid, value: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape), check=False)

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[..., np.ndarray]) -> "Field":
        """Evaluate ``fn(x)`` or ``fn(x, y)`` at cell centers."""
        return cls(grid, np.asarray(fn(*grid.cell_centers()), dtype=np.float64))

    def __repr__(self) -> str:
        return (
            f"Field(shape={self.grid.shape}, "
            f"min={self.values.min():.6g}, max={self.values.max():.6g})"
        )


def laplacian_raw(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Apply the Neumann Laplacian to a bare array (no Field wrapping).

    Mirror ghost cells realize the zero-flux boundary: the ghost value
    equals the adjacent interior value, so the boundary face carries no
    flux and the stencil degenerates to a one-sided difference there.
    """
    a = values
    if grid.dim == 1:
        inv = 1.0 / (grid.spacing[0] * grid.spacing[0])
        out = np.empty_like(a)
        out[1:-1] = (a[2:] - 2.0 * a[1:-1] + a[:-2]) * inv
        out[0] = (a[1] - a[0]) * inv
        out[-1] = (a[-2] - a[-1]) * inv
        return out
    inv_x = 1.0 / (grid.spacing[0] * grid.spacing[0])
    inv_y = 1.0 / (grid.spacing[1] * grid.spacing[1])
    out = np.empty_like(a)
    out[1:-1, :] = (a[2:, :] - 2.0 * a[1:-1, :] + a[:-2, :]) * inv_x
    out[0, :] = (a[1, :] - a[0, :]) * inv_x
    out[-1, :] = (a[-2, :] - a[-1, :]) * inv_x
    out[:, 1:-1] += (a[:, 2:] - 2.0 * a[:, 1:-1] + a[:, :-2]) * inv_y
    out[:, 0] += (a[:, 1] - a[:, 0]) * inv_y
    out[:, -1] += (a[:, -2] - a[:, -1]) * inv_y
    return out


@lru_cache(maxsize=None)
def diffusion_diagonal(grid: Grid) -> np.ndarray:
    """Diagonal of ``-laplacian`` (used by the Jacobi preconditioner)."""
    diag = np.zeros(grid.shape)
    for ax, h in enumerate(grid.spacing):
        inv = 1.0 / (h * h)
        d = np.moveaxis(diag, ax, -1)
        d[..., :] += 2.0 * inv
        d[..., 0] -= inv
        d[..., -1] -= inv
    diag.flags.writeable = False
    return diag


def laplacian_apply(f: Field) -> Field:
    """Second-order Neumann Laplacian of ``f``."""
    return Field(f.grid, laplacian_raw(f.values, f.grid))


def integrate(f: Field) -> float:
    """Midpoint quadrature of ``f`` over the domain."""
    return float(f.values.sum() * f.grid.cell_volume)


def inner(f: Field, g: Field) -> float:
    """Cell-volume-weighted inner product of two fields."""
    if f.grid is not g.grid and f.grid != g.grid:
        raise ConfigurationError("fields live on different grids")
    return float((f.values * g.values).sum() * f.grid.cell_volume)


def norm_l2(f: Field) -> float:
    """Volume-weighted 2-norm, the discrete stand-in for the L2 norm."""
    return float(np.sqrt((f.values * f.values).sum() * f.grid.cell_volume))


def norm_linf(f: Field) -> float:
    return float(np.abs(f.values).max())


def norm_l2_raw(values: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt((values * values).sum() * grid.cell_volume))


def seminorm_h1(f: Field) -> float:
    """Face-difference gradient seminorm. Diagnostic only; no acceptance
    criterion depends on it."""
    total = 0.0
    for ax, h in enumerate(f.grid.spacing):
        a = np.swapaxes(f.values, ax, -1)
        d = (a[..., 1:] - a[..., :-1]) / h
        total += (d * d).sum() * f.grid.cell_volume
    return float(np.sqrt(total))


def spacetime_norm_l2(stack: np.ndarray, grid: Grid, dt: float) -> float:
    """L2 norm over space-time of a stack of per-step values.

    ``stack`` has shape ``(n_steps, *grid.shape)`` or ``(n_steps,)`` for
    spatially constant slices; time quadrature is left-endpoint with
    weight ``dt``.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim == 1:
        domain = float(np.prod(grid.extents))
        return float(np.sqrt((stack * stack).sum() * dt * domain))
    sq = (stack * stack).reshape(stack.shape[0], -1).sum(axis=1) * grid.cell_volume
    return float(np.sqrt(sq.sum() * dt))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, t_final] into ``steps`` intervals."""

    t_final: float
    steps: int

    def __post_init__(self):
        if not np.isfinite(self.t_final) or self.t_final <= 0.0:
            raise ConfigurationError(f"t_final must be positive, got {self.t_final}")
        if self.steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.t_final / self.steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.steps + 1)


# ---------------------------------------------------------------------------
# Snapshot and CSV export
#
# A snapshot is a flat little-endian float64 array in row-major order plus a
# sidecar text header "<path>.hdr" holding dim, cells_per_axis, and extents.
# ---------------------------------------------------------------------------

def write_snapshot(f: Field, path: str | Path) -> None:
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    g = f.grid
    header = (
        f"dim {g.dim}\n"
        f"cells {' '.join(str(c) for c in g.cells_per_axis)}\n"
        f"extents {' '.join(repr(e) for e in g.extents)}\n"
    )
    Path(str(path) + ".hdr").write_text(header)


def read_snapshot(path: str | Path) -> Field:
    path = Path(path)
    lines = Path(str(path) + ".hdr").read_text().splitlines()
    entries = dict(line.split(maxsplit=1) for line in lines if line.strip())
    try:
        dim = int(entries["dim"])
        cells = [int(c) for c in entries["cells"].split()]
        extents = [float(e) for e in entries["extents"].split()]
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"malformed snapshot header for {path}: {exc}") from exc
    grid = build_grid(dim, extents, cells)
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    if raw.size != grid.n_cells:
        raise ConfigurationError(
            f"snapshot {path} holds {raw.size} values, grid expects {grid.n_cells}"
        )
    return Field(grid, raw.reshape(grid.shape))


def write_field_csv(f: Field, path: str | Path) -> None:
    """One row per cell: coordinates then value, row-major cell order."""
    coords = [c.ravel() for c in f.grid.cell_centers()]
    values = f.values.ravel()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(f.grid.dim)] + ["value"])
        for idx in range(values.size):
            writer.writerow([f"{c[idx]:.17g}" for c in coords] + [f"{values[idx]:.17g}"])
