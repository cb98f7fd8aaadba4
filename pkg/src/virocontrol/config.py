"""Run configuration: a single YAML file with a strict, flat schema.

Unknown keys are rejected everywhere, every constraint failure names the
offending key, and all defaults are resolved at parse time so the frozen
copy echoed into the output directory re-parses to an equal configuration.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError
from .fields import Field, Grid, TimeGrid, build_grid, read_snapshot
from .forward import SPACE_TIME, TIME_ONLY, Control, InitialData, ModelParams
from .kernel import LinearSolveOptions
from .objective import ChronicTracking, Objective, TerminalMass, TerminalMassPlusDose
from .optimizer import OptimizerOptions

MODES = ("simulate", "optimize", "gradcheck", "verify")

PARAM_KEYS = ("alpha", "beta", "delta1", "delta2", "delta_v", "b", "B", "u_cap")


@dataclass(frozen=True)
class GridSpec:
    dim: int
    extents: tuple[float, ...]
    cells: tuple[int, ...]


@dataclass(frozen=True)
class TimeSpec:
    t_final: float
    steps: int


@dataclass(frozen=True)
class FieldSpec:
    kind: str  # constant | gaussian_bump | file
    value: float | None = None
    center: tuple[float, ...] | None = None
    width: float | None = None
    amplitude: float | None = None
    path: str | None = None


@dataclass(frozen=True)
class ControlSpec:
    kind: str  # zero | constant | file
    mode: str
    value: float | None = None
    path: str | None = None


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str
    gamma1: float | None = None
    gamma2: float | None = None
    p: float | None = None
    target: FieldSpec | None = None


@dataclass(frozen=True)
class GradcheckSpec:
    lambdas: tuple[float, ...] = (0.1, 0.05, 0.025)
    n_directions: int = 5
    fd_step: float = 1e-3
    cosine_min: float = 0.999
    rel_error_max: float = 0.05
    duality_max: float = 0.05


@dataclass(frozen=True)
class SolverSpec:
    tolerance: float = 1e-10
    max_iterations: int | None = None


@dataclass(frozen=True)
class RunConfig:
    mode: str
    grid: GridSpec
    time: TimeSpec
    params: ModelParams
    initial: tuple[FieldSpec, FieldSpec, FieldSpec]  # rho1, rho2, v
    control: ControlSpec
    objective: ObjectiveSpec | None
    optimizer: OptimizerOptions
    solver: SolverSpec
    gradcheck: GradcheckSpec
    output_dir: str
    seed: int
    snapshot_stride: int


def _require_mapping(node, where: str) -> dict:
    if not isinstance(node, dict):
        raise ConfigurationError(f"{where}: expected a mapping, got {type(node).__name__}")
    return node


def _reject_unknown(node: dict, allowed, where: str) -> None:
    unknown = set(node) - set(allowed)
    if unknown:
        raise ConfigurationError(
            f"{where}: unknown key(s) {sorted(unknown)}; allowed keys are {sorted(allowed)}"
        )


def _need(node: dict, key: str, where: str):
    if key not in node:
        raise ConfigurationError(f"{where}: missing required key '{key}'")
    return node[key]


def _as_float(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{where}: expected a number, got {value!r}")
    out = float(value)
    if not math.isfinite(out):
        raise ConfigurationError(f"{where}: value must be finite, got {value!r}")
    return out


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(f"{where}: expected an integer, got {value!r}")
    return value


def _as_str(value, where: str, choices=None) -> str:
    if not isinstance(value, str):
        raise ConfigurationError(f"{where}: expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigurationError(f"{where}: must be one of {list(choices)}, got {value!r}")
    return value


def _parse_grid(node, where="grid") -> GridSpec:
    node = _require_mapping(node, where)
    _reject_unknown(node, ("dim", "extents", "cells"), where)
    dim = _as_int(_need(node, "dim", where), f"{where}.dim")
    extents = _need(node, "extents", where)
    cells = _need(node, "cells", where)
    if not isinstance(extents, list) or not isinstance(cells, list):
        raise ConfigurationError(f"{where}: extents and cells must be lists")
    extents = tuple(_as_float(e, f"{where}.extents") for e in extents)
    cells = tuple(_as_int(c, f"{where}.cells") for c in cells)
    build_grid(dim, extents, cells)  # surfaces constraint violations now
    return GridSpec(dim=dim, extents=extents, cells=cells)


def _parse_time(node, where="time") -> TimeSpec:
    node = _require_mapping(node, where)
    _reject_unknown(node, ("t_final", "steps"), where)
    t_final = _as_float(_need(node, "t_final", where), f"{where}.t_final")
    steps = _as_int(_need(node, "steps", where), f"{where}.steps")
    TimeGrid(t_final, steps)
    return TimeSpec(t_final=t_final, steps=steps)


def _parse_params(node, where="params") -> ModelParams:
    node = _require_mapping(node, where)
    _reject_unknown(node, PARAM_KEYS, where)
    values = {}
    for key in PARAM_KEYS:
        val = _as_float(_need(node, key, where), f"{where}.{key}")
        if val <= 0.0:
            raise ConfigurationError(
                f"{where}.{key}: model rates are fixed positive constants, got {val}"
            )
        values[key] = val
    return ModelParams(**values)


def _parse_field_spec(node, dim: int, where: str) -> FieldSpec:
    node = _require_mapping(node, where)
    kind = _as_str(_need(node, "kind", where), f"{where}.kind",
                   ("constant", "gaussian_bump", "file"))
    if kind == "constant":
        _reject_unknown(node, ("kind", "value"), where)
        value = _as_float(_need(node, "value", where), f"{where}.value")
        if value < 0.0:
            raise ConfigurationError(f"{where}.value: initial data must be >= 0, got {value}")
        return FieldSpec(kind=kind, value=value)
    if kind == "gaussian_bump":
        _reject_unknown(node, ("kind", "center", "width", "amplitude"), where)
        center = _need(node, "center", where)
        if not isinstance(center, list) or len(center) != dim:
            raise ConfigurationError(f"{where}.center: expected a list of {dim} numbers")
        center = tuple(_as_float(c, f"{where}.center") for c in center)
        width = _as_float(_need(node, "width", where), f"{where}.width")
        amplitude = _as_float(_need(node, "amplitude", where), f"{where}.amplitude")
        if width <= 0.0:
            raise ConfigurationError(f"{where}.width: must be positive, got {width}")
        if amplitude < 0.0:
            raise ConfigurationError(f"{where}.amplitude: must be >= 0, got {amplitude}")
        return FieldSpec(kind=kind, center=center, width=width, amplitude=amplitude)
    _reject_unknown(node, ("kind", "path"), where)
    path = _as_str(_need(node, "path", where), f"{where}.path")
    if not Path(path).is_file():
        raise ConfigurationError(f"{where}.path: file does not exist: {path}")
    return FieldSpec(kind=kind, path=path)


def _parse_initial(node, dim: int, where="initial") -> tuple[FieldSpec, FieldSpec, FieldSpec]:
    node = _require_mapping(node, where)
    _reject_unknown(node, ("rho1", "rho2", "v"), where)
    return (
        _parse_field_spec(_need(node, "rho1", where), dim, f"{where}.rho1"),
        _parse_field_spec(_need(node, "rho2", where), dim, f"{where}.rho2"),
        _parse_field_spec(_need(node, "v", where), dim, f"{where}.v"),
    )


def _parse_control(node, u_cap: float, where="control") -> ControlSpec:
    if node is None:
        return ControlSpec(kind="zero", mode=SPACE_TIME)
    node = _require_mapping(node, where)
    kind = _as_str(_need(node, "kind", where), f"{where}.kind", ("zero", "constant", "file"))
    mode = _as_str(node.get("mode", SPACE_TIME), f"{where}.mode", (SPACE_TIME, TIME_ONLY))
    if kind == "zero":
        _reject_unknown(node, ("kind", "mode"), where)
        return ControlSpec(kind=kind, mode=mode)
    if kind == "constant":
        _reject_unknown(node, ("kind", "mode", "value"), where)
        value = _as_float(_need(node, "value", where), f"{where}.value")
        if not 0.0 <= value <= u_cap:
            raise ConfigurationError(
                f"{where}.value: must lie in [0, u_cap={u_cap}], got {value}"
            )
        return ControlSpec(kind=kind, mode=mode, value=value)
    _reject_unknown(node, ("kind", "mode", "path"), where)
    path = _as_str(_need(node, "path", where), f"{where}.path")
    if not Path(path).is_file():
        raise ConfigurationError(f"{where}.path: file does not exist: {path}")
    return ControlSpec(kind=kind, mode=mode, path=path)


def _parse_objective(node, dim: int, where="objective") -> ObjectiveSpec | None:
    if node is None:
        return None
    node = _require_mapping(node, where)
    kind = _as_str(
        _need(node, "kind", where), f"{where}.kind",
        ("terminal_mass", "terminal_mass_plus_dose", "chronic_tracking"),
    )
    if kind == "terminal_mass":
        _reject_unknown(node, ("kind", "gamma1", "gamma2"), where)
        return ObjectiveSpec(
            kind=kind,
            gamma1=_as_float(_need(node, "gamma1", where), f"{where}.gamma1"),
            gamma2=_as_float(_need(node, "gamma2", where), f"{where}.gamma2"),
        )
    if kind == "terminal_mass_plus_dose":
        _reject_unknown(node, ("kind", "gamma1", "gamma2", "p"), where)
        return ObjectiveSpec(
            kind=kind,
            gamma1=_as_float(_need(node, "gamma1", where), f"{where}.gamma1"),
            gamma2=_as_float(_need(node, "gamma2", where), f"{where}.gamma2"),
            p=_as_float(_need(node, "p", where), f"{where}.p"),
        )
    _reject_unknown(node, ("kind", "p", "target"), where)
    return ObjectiveSpec(
        kind=kind,
        p=_as_float(_need(node, "p", where), f"{where}.p"),
        target=_parse_field_spec(_need(node, "target", where), dim, f"{where}.target"),
    )


def _parse_optimizer(node, where="optimizer") -> OptimizerOptions:
    if node is None:
        return OptimizerOptions()
    node = _require_mapping(node, where)
    allowed = ("max_outer_iterations", "armijo_c", "backtrack_factor",
               "initial_step", "stationarity_tol", "max_backtracks")
    _reject_unknown(node, allowed, where)
    defaults = OptimizerOptions()
    kwargs = {}
    for key in allowed:
        if key in node:
            cast = _as_int if key in ("max_outer_iterations", "max_backtracks") else _as_float
            kwargs[key] = cast(node[key], f"{where}.{key}")
        else:
            kwargs[key] = getattr(defaults, key)
    return OptimizerOptions(**kwargs)


def _parse_solver(node, where="solver") -> SolverSpec:
    if node is None:
        return SolverSpec()
    node = _require_mapping(node, where)
    _reject_unknown(node, ("tolerance", "max_iterations"), where)
    tol = _as_float(node.get("tolerance", 1e-10), f"{where}.tolerance")
    max_it = node.get("max_iterations", None)
    if max_it is not None:
        max_it = _as_int(max_it, f"{where}.max_iterations")
    LinearSolveOptions(tolerance=tol, max_iterations=max_it)
    return SolverSpec(tolerance=tol, max_iterations=max_it)


def _parse_gradcheck(node, where="gradcheck") -> GradcheckSpec:
    if node is None:
        return GradcheckSpec()
    node = _require_mapping(node, where)
    allowed = ("lambdas", "n_directions", "fd_step", "cosine_min",
               "rel_error_max", "duality_max")
    _reject_unknown(node, allowed, where)
    defaults = GradcheckSpec()
    lambdas = node.get("lambdas")
    if lambdas is not None:
        if not isinstance(lambdas, list) or not lambdas:
            raise ConfigurationError(f"{where}.lambdas: expected a non-empty list")
        lambdas = tuple(_as_float(l, f"{where}.lambdas") for l in lambdas)
    else:
        lambdas = defaults.lambdas
    return GradcheckSpec(
        lambdas=lambdas,
        n_directions=_as_int(node.get("n_directions", defaults.n_directions),
                             f"{where}.n_directions"),
        fd_step=_as_float(node.get("fd_step", defaults.fd_step), f"{where}.fd_step"),
        cosine_min=_as_float(node.get("cosine_min", defaults.cosine_min),
                             f"{where}.cosine_min"),
        rel_error_max=_as_float(node.get("rel_error_max", defaults.rel_error_max),
                                f"{where}.rel_error_max"),
        duality_max=_as_float(node.get("duality_max", defaults.duality_max),
                              f"{where}.duality_max"),
    )


_TOP_KEYS = ("mode", "grid", "time", "params", "initial", "control", "objective",
             "optimizer", "solver", "gradcheck", "output_dir", "seed", "snapshot_stride")


def parse_config_dict(raw: dict) -> RunConfig:
    raw = _require_mapping(raw, "config")
    _reject_unknown(raw, _TOP_KEYS, "config")
    mode = _as_str(_need(raw, "mode", "config"), "config.mode", MODES)
    grid = _parse_grid(_need(raw, "grid", "config"))
    time = _parse_time(_need(raw, "time", "config"))
    params = _parse_params(_need(raw, "params", "config"))
    initial = _parse_initial(_need(raw, "initial", "config"), grid.dim)
    control = _parse_control(raw.get("control"), params.u_cap)
    objective = _parse_objective(raw.get("objective"), grid.dim)
    if mode in ("optimize", "gradcheck") and objective is None:
        raise ConfigurationError(f"config.objective: required for mode '{mode}'")
    seed = _as_int(raw.get("seed", 0), "config.seed")
    stride = _as_int(raw.get("snapshot_stride", 0), "config.snapshot_stride")
    if stride < 0:
        raise ConfigurationError(f"config.snapshot_stride: must be >= 0, got {stride}")
    output_dir = _as_str(raw.get("output_dir", "out"), "config.output_dir")
    return RunConfig(
        mode=mode,
        grid=grid,
        time=time,
        params=params,
        initial=initial,
        control=control,
        objective=objective,
        optimizer=_parse_optimizer(raw.get("optimizer")),
        solver=_parse_solver(raw.get("solver")),
        gradcheck=_parse_gradcheck(raw.get("gradcheck")),
        output_dir=output_dir,
        seed=seed,
        snapshot_stride=stride,
    )


def parse_config(path: str | Path) -> RunConfig:
    """Read, validate, and fully default a configuration file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file does not exist: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config file is not valid YAML: {exc}") from exc
    return parse_config_dict(raw)


def _strip_nones(obj):
    if isinstance(obj, dict):
        return {k: _strip_nones(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_strip_nones(v) for v in obj]
    return obj


def config_to_dict(cfg: RunConfig) -> dict:
    """Plain-dict form with all defaults resolved; re-parses to an equal
    RunConfig."""
    out = {
        "mode": cfg.mode,
        "grid": {"dim": cfg.grid.dim, "extents": list(cfg.grid.extents),
                 "cells": list(cfg.grid.cells)},
        "time": {"t_final": cfg.time.t_final, "steps": cfg.time.steps},
        "params": {k: getattr(cfg.params, k) for k in PARAM_KEYS},
        "initial": {
            "rho1": _strip_nones(asdict(cfg.initial[0])),
            "rho2": _strip_nones(asdict(cfg.initial[1])),
            "v": _strip_nones(asdict(cfg.initial[2])),
        },
        "control": _strip_nones(asdict(cfg.control)),
        "optimizer": asdict(cfg.optimizer),
        "solver": {"tolerance": cfg.solver.tolerance,
                   "max_iterations": cfg.solver.max_iterations},
        "gradcheck": {**asdict(cfg.gradcheck), "lambdas": list(cfg.gradcheck.lambdas)},
        "output_dir": cfg.output_dir,
        "seed": cfg.seed,
        "snapshot_stride": cfg.snapshot_stride,
    }
    if cfg.objective is not None:
        obj = _strip_nones(asdict(cfg.objective))
        if cfg.objective.target is not None:
            obj["target"] = _strip_nones(asdict(cfg.objective.target))
        out["objective"] = obj
    for spec in ("rho1", "rho2", "v"):
        node = out["initial"][spec]
        if "center" in node:
            node["center"] = list(node["center"])
    return out


def write_config_echo(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))


# ---------------------------------------------------------------------------
# Materialization: specs -> solver objects
# ---------------------------------------------------------------------------

def materialize_grid(cfg: RunConfig) -> Grid:
    return build_grid(cfg.grid.dim, cfg.grid.extents, cfg.grid.cells)


def materialize_time(cfg: RunConfig) -> TimeGrid:
    return TimeGrid(cfg.time.t_final, cfg.time.steps)


def materialize_field(spec: FieldSpec, grid: Grid) -> Field:
    if spec.kind == "constant":
        return Field.full(grid, spec.value)
    if spec.kind == "gaussian_bump":
        centers = grid.cell_centers()
        sq = sum((c - x0) ** 2 for c, x0 in zip(centers, spec.center))
        return Field(grid, spec.amplitude * np.exp(-sq / (2.0 * spec.width ** 2)))
    f = read_snapshot(spec.path)
    if f.grid != grid:
        raise ConfigurationError(
            f"field snapshot {spec.path} was written on a different grid"
        )
    return f


def materialize_initial(cfg: RunConfig, grid: Grid) -> InitialData:
    r1, r2, v = (materialize_field(s, grid) for s in cfg.initial)
    return InitialData(rho1_0=r1, rho2_0=r2, v_0=v)


def materialize_control(cfg: RunConfig, grid: Grid, time: TimeGrid) -> Control:
    spec = cfg.control
    cap = cfg.params.u_cap
    if spec.kind == "zero":
        return Control.zero(cap, grid, time, spec.mode)
    if spec.kind == "constant":
        return Control.constant(spec.value, cap, grid, time, spec.mode)
    f = materialize_field(FieldSpec(kind="file", path=spec.path), grid)
    values = np.broadcast_to(f.values, (time.steps,) + grid.shape).copy()
    return Control(spec.mode if spec.mode == SPACE_TIME else TIME_ONLY,
                   values if spec.mode == SPACE_TIME
                   else values.reshape(time.steps, -1)[:, 0],
                   cap, grid, time)


def materialize_objective(cfg: RunConfig, grid: Grid) -> Objective | None:
    spec = cfg.objective
    if spec is None:
        return None
    if spec.kind == "terminal_mass":
        return TerminalMass(gamma1=spec.gamma1, gamma2=spec.gamma2)
    if spec.kind == "terminal_mass_plus_dose":
        return TerminalMassPlusDose(gamma1=spec.gamma1, gamma2=spec.gamma2, p=spec.p)
    return ChronicTracking(target=materialize_field(spec.target, grid), p=spec.p)


def materialize_solver(cfg: RunConfig) -> LinearSolveOptions:
    return LinearSolveOptions(tolerance=cfg.solver.tolerance,
                              max_iterations=cfg.solver.max_iterations)
