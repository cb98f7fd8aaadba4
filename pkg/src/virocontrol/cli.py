"""Command-line interface: simulate | optimize | gradcheck | verify.

Every run freezes its fully-defaulted configuration into the output
directory, writes a deterministic summary.json plus mode-specific CSV and
snapshot artifacts, and reports wall-clock timings separately (timings are
the one artifact excluded from the bit-for-bit reproducibility guarantee).

Exit codes: 0 success, 2 configuration error, 3 linear-solver failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time as _time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .adjoint import duality_check, fd_gradient_check, reduced_gradient, solve_adjoint
from .config import (
    RunConfig,
    materialize_control,
    materialize_grid,
    materialize_initial,
    materialize_objective,
    materialize_solver,
    materialize_time,
    parse_config,
    write_config_echo,
)
from .errors import ConfigurationError, SolverError, VerificationError, VirocontrolError
from .fields import Field, write_snapshot
from .forward import export_timeseries, solve_forward, verify_bounds
from .objective import eval_J
from .optimizer import kkt_sign_report, solve_ocp, stationarity_residual
from .sensitivity import directional_derivative_check, linearize_coeffs, solve_linearized

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_SOLVER_ERROR = 3
EXIT_VERIFICATION_FAILURE = 4


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_summary(out_dir: Path, summary: dict) -> None:
    text = json.dumps(summary, sort_keys=True, indent=2, default=_json_default)
    (out_dir / "summary.json").write_text(text + "\n")


def _bounds_summary(report) -> dict:
    out = {}
    for name in ("rho1", "rho2", "v"):
        comp = getattr(report, name)
        out[name] = {
            "bound": comp.bound,
            "max_value": comp.max_value,
            "min_value": comp.min_value,
            "slack": comp.slack,
            "passes": comp.passes,
            "worst_index": list(comp.worst_index),
        }
    out["passes"] = report.passes
    return out


def _write_state_snapshots(traj, out_dir: Path, stride: int) -> None:
    n = traj.time.steps
    levels = [n] if stride == 0 else sorted(set(range(0, n + 1, stride)) | {n})
    for k in levels:
        for comp in ("rho1", "rho2", "v"):
            suffix = "final" if k == n else f"{k:06d}"
            write_snapshot(traj.field(comp, k), out_dir / f"{comp}_{suffix}.f64")


def run_simulate(cfg: RunConfig, out_dir: Path, check_bounds: bool) -> dict:
    grid = materialize_grid(cfg)
    time = materialize_time(cfg)
    init = materialize_initial(cfg, grid)
    ctrl = materialize_control(cfg, grid, time)
    obj = materialize_objective(cfg, grid)
    options = materialize_solver(cfg)

    traj = solve_forward(init, ctrl, time, cfg.params, options)
    report = verify_bounds(traj, init, cfg.params, cfg.params.u_cap)
    export_timeseries(traj, out_dir / "timeseries.csv")
    _write_state_snapshots(traj, out_dir, cfg.snapshot_stride)

    summary = {"mode": cfg.mode, "bounds": _bounds_summary(report)}
    if obj is not None:
        summary["J"] = eval_J(traj, ctrl, obj)
    if check_bounds and not report.passes:
        _write_summary(out_dir, summary)
        raise VerificationError("state bounds verification failed; see summary.json")
    return summary


def run_optimize(cfg: RunConfig, out_dir: Path) -> dict:
    grid = materialize_grid(cfg)
    time = materialize_time(cfg)
    init = materialize_initial(cfg, grid)
    u_init = materialize_control(cfg, grid, time)
    obj = materialize_objective(cfg, grid)
    options = materialize_solver(cfg)

    u, state, adj, history = solve_ocp(
        init, cfg.params, time, obj, cfg.optimizer, u_init, options
    )
    history.write_csv(out_dir / "history.csv")
    grad = reduced_gradient(adj.adj_v, u, obj, state)
    kkt = kkt_sign_report(u, grad, tol=1e-6)
    export_timeseries(state, out_dir / "timeseries.csv")
    _write_state_snapshots(state, out_dir, cfg.snapshot_stride)

    dense = u.as_spacetime()
    write_snapshot(Field(grid, dense.mean(axis=0)), out_dir / "control_mean.f64")
    write_snapshot(Field(grid, dense[0]), out_dir / "control_first_step.f64")
    _control_csv(u, out_dir / "control.csv")

    first = history.records[0]
    last = history.records[-1]
    return {
        "mode": cfg.mode,
        "J_initial": first.f_value,
        "J_final": last.f_value,
        "residual_initial": first.residual,
        "residual_final": last.residual,
        "iterations": last.iteration,
        "converged": history.converged,
        "stalled": history.stalled,
        "kkt_violation_fraction": kkt.violation_fraction,
        "control_max": float(dense.max()),
        "control_min": float(dense.min()),
    }


def _control_csv(u, path: Path) -> None:
    import csv

    dense = u.as_spacetime()
    dt = u.time.dt
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "t", "min", "mean", "max"])
        for k in range(dense.shape[0]):
            sl = dense[k]
            writer.writerow([
                k, f"{k * dt:.17g}", f"{sl.min():.17g}",
                f"{sl.mean():.17g}", f"{sl.max():.17g}",
            ])


def run_gradcheck(cfg: RunConfig, out_dir: Path) -> dict:
    grid = materialize_grid(cfg)
    time = materialize_time(cfg)
    init = materialize_initial(cfg, grid)
    u_star = materialize_control(cfg, grid, time)
    obj = materialize_objective(cfg, grid)
    options = materialize_solver(cfg)
    gc = cfg.gradcheck
    rng = np.random.default_rng(cfg.seed)

    dense = u_star.as_spacetime()
    margin = float(min(dense.min(), cfg.params.u_cap - dense.max()))
    if margin <= 0.0:
        raise ConfigurationError(
            "gradcheck needs a strictly interior control; adjust control.value"
        )

    # tangent vs finite differences of the forward map
    delta_u = rng.uniform(-1.0, 1.0, size=(time.steps,) + grid.shape)
    delta_u *= 0.999 * margin / (max(gc.lambdas) * float(np.abs(delta_u).max()))
    dd_report = directional_derivative_check(
        u_star, delta_u, gc.lambdas, init, cfg.params, time, options
    )
    dd_report.write_csv(out_dir / "convergence_report.csv")

    # duality pairing of the same perturbation
    base = solve_forward(init, u_star, time, cfg.params, options)
    coeffs = linearize_coeffs(base, cfg.params)
    tangent = solve_linearized(coeffs, delta_u, time, cfg.params, options)
    adj = solve_adjoint(base, u_star, obj, cfg.params, options=options)
    duality = duality_check(tangent, adj, delta_u, obj, base, u_star)

    # adjoint gradient vs finite differences of the reduced cost
    fd_report = fd_gradient_check(
        u_star, init, cfg.params, time, obj,
        n_directions=gc.n_directions, fd_step=gc.fd_step,
        seed=cfg.seed + 1, options=options,
    )
    fd_report.write_csv(out_dir / "gradient_check.csv")

    passed = (
        fd_report.cosine >= gc.cosine_min
        and fd_report.rel_error <= gc.rel_error_max
        and duality <= gc.duality_max
    )
    summary = {
        "mode": cfg.mode,
        "duality_residual": duality,
        "fd_errors": list(dd_report.errors),
        "fd_ratios": list(dd_report.ratios),
        "fd_floor_reached": dd_report.floor_reached,
        "gradient_cosine": fd_report.cosine,
        "gradient_rel_error": fd_report.rel_error,
        "passes": passed,
    }
    if not passed:
        _write_summary(out_dir, summary)
        raise VerificationError("gradient checks failed; see summary.json")
    return summary


def run(cfg: RunConfig, output_dir: str | Path | None = None) -> dict:
    """Execute one configured run; returns the summary dict. Artifacts land
    in the output directory, which is created if needed."""
    out_dir = Path(output_dir if output_dir is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config_echo(cfg, out_dir / "config_echo.yaml")

    timings: dict[str, float] = {}
    start = _time.perf_counter()
    if cfg.mode == "simulate":
        summary = run_simulate(cfg, out_dir, check_bounds=False)
    elif cfg.mode == "verify":
        summary = run_simulate(cfg, out_dir, check_bounds=True)
    elif cfg.mode == "optimize":
        summary = run_optimize(cfg, out_dir)
    elif cfg.mode == "gradcheck":
        summary = run_gradcheck(cfg, out_dir)
    else:  # unreachable: parse_config restricts modes
        raise ConfigurationError(f"unknown mode {cfg.mode!r}")
    timings["total_seconds"] = _time.perf_counter() - start

    summary["seed"] = cfg.seed
    _write_summary(out_dir, summary)
    # timings vary run to run, so they live outside the deterministic summary
    (out_dir / "timings.txt").write_text(
        "".join(f"{k} {v:.6f}\n" for k, v in timings.items())
    )
    return summary


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="virocontrol",
        description="Simulate and optimize infusion schedules for a "
                    "three-species reaction-diffusion virotherapy model.",
    )
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in ("simulate", "optimize", "gradcheck", "verify"):
        sp = sub.add_parser(mode, help=f"run in {mode} mode")
        sp.add_argument("--config", required=True, help="path to the YAML run configuration")
        sp.add_argument("--output", default=None, help="output directory override")
        sp.add_argument("--seed", type=int, default=None, help="rng seed override")
    return parser


def run_cli(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if cfg.mode != args.mode:
            cfg = RunConfig(**{**asdict_shallow(cfg), "mode": args.mode})
        if args.seed is not None:
            cfg = RunConfig(**{**asdict_shallow(cfg), "seed": args.seed})
        summary = run(cfg, output_dir=args.output)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER_ERROR
    except VerificationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION_FAILURE
    except VirocontrolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER_ERROR
    out_dir = args.output if args.output is not None else cfg.output_dir
    status = "ok" if summary.get("passes", True) else "failed"
    print(f"{args.mode}: {status}; artifacts in {out_dir}")
    return EXIT_OK


def asdict_shallow(cfg: RunConfig) -> dict:
    """Field dict of a RunConfig without recursing into nested dataclasses."""
    return {name: getattr(cfg, name) for name in cfg.__dataclass_fields__}


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
