"""Command-line entry point.

    lpvfbs run --machine machine.yaml --trajectory butterfly --variants baseline,b,e --out out/
    lpvfbs validate-model --machine machine.yaml

Exit codes: 0 success, 1 a computation failed, 2 invalid configuration.
"""

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .config import (RunConfig, load_run, load_yaml, parse_controller, parse_machine, parse_trajectory,
                     parse_variants, parse_window, _switch)
from .controller import ControllerParams, MachineModel
from .errors import ConfigError, LPVFBSError
from .lifted import workspace_grid, worst_case_settle
from .lpv_model import parameterize_gj, validate_parameterization
from .sim import Limits, gen_trajectory, load_trajectory_csv, run_comparison

log = logging.getLogger("lpvfbs")

VALIDATE_TOL = 1e-6


def build_parser():
    ap = argparse.ArgumentParser(prog="lpvfbs", description="LPV filtered B-splines feedforward for delta printers.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate controller variants on a trajectory")
    run.add_argument("--config", help="run file (YAML); command-line flags override it")
    run.add_argument("--machine", help="machine file (YAML) with geometry and model sections")
    run.add_argument("--trajectory", help="shape name, CSV path (t,x,y,z) or YAML trajectory section")
    run.add_argument("--variants", help="comma-separated list from baseline,a,b,c,d,e")
    run.add_argument("--lc", help="window length L_C: auto or an integer")
    run.add_argument("--solver", choices=("pinv", "qr"))
    run.add_argument("--selector", choices=("median", "mean", "mindist", "perpoint"))
    run.add_argument("--switching", choices=("on", "off"))
    run.add_argument("--out", help="output directory")
    run.add_argument("--seed", type=int)

    val = sub.add_parser("validate-model", help="check the parameterized model against numeric inversion")
    val.add_argument("--machine", help="machine file (YAML)")
    val.add_argument("--grid-pitch", type=float, default=10.0, help="workspace grid pitch in mm")
    val.add_argument("--tol", type=float, default=VALIDATE_TOL)
    return ap


def _trajectory_arg(value):
    p = Path(value)
    if p.suffix.lower() in (".yaml", ".yml"):
        return parse_trajectory(load_yaml(p, "trajectory"))
    return parse_trajectory(value)


def resolve_config(args):
    """Merge the run file (if any) with command-line overrides."""
    cfg = load_run(args.config) if args.config else RunConfig()
    if args.machine:
        cfg = replace(cfg, machine=parse_machine(load_yaml(args.machine, "machine")), machine_path=args.machine)
    if args.trajectory:
        cfg = replace(cfg, trajectory=_trajectory_arg(args.trajectory))
    if args.variants:
        cfg = replace(cfg, variants=parse_variants(args.variants))
    ctl = cfg.controller
    if args.lc:
        ctl = replace(ctl, window=parse_window(args.lc, "--lc"))
    if args.solver:
        ctl = replace(ctl, solver=args.solver)
    if args.selector:
        ctl = replace(ctl, selector=args.selector)
    if args.switching:
        ctl = replace(ctl, switching=_switch(args.switching, "--switching"))
    cfg = replace(cfg, controller=parse_controller(asdict(ctl)))
    if args.out:
        cfg = replace(cfg, out=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def make_trajectory(tc, geometry, dt):
    if tc.shape == "csv":
        return load_trajectory_csv(tc.csv, geometry, dt)
    limits = Limits(tc.v_max, tc.a_max, dt)
    return gen_trajectory(tc.shape, geometry, limits, scale=tc.scale, offset=tc.offset, z=tc.z,
                          waypoints=tc.waypoints, side=tc.side)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


SERIES_HEADER = ["t", "desired_x", "desired_y", "desired_z", "command_qA", "command_qB", "command_qC",
                 "actual_x", "actual_y", "actual_z", "contour_error_um"]


def write_outputs(out, cfg, rows, runs, Xd, window, dt, settle):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0])
    _write_csv(out / "comparison.csv", keys, [[r[k] for k in keys] for r in rows])
    t = (np.arange(len(Xd)) - window) * dt
    for v, r in runs.items():
        data = np.column_stack([t, Xd, r.command, r.X, r.error.error])
        np.savetxt(out / f"series_{v}.csv", data, delimiter=",", header=",".join(SERIES_HEADER),
                   comments="", fmt="%.10g")
    manifest = {
        "config": cfg.as_dict(),
        "window": window,
        "window_source": "auto" if settle is not None else "fixed",
        "comparison": rows,
    }
    if settle is not None:
        manifest["settle"] = {
            "recommended": settle.recommended,
            "grid_pitch_mm": settle.grid_pitch,
            "grid_points": int(len(settle.positions)),
            "worst_position_mm": settle.worst_position.tolist(),
        }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_jsonable))
    return out


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def cmd_run(args):
    cfg = resolve_config(args)
    np.random.seed(cfg.seed)
    mc, cc = cfg.machine, cfg.controller
    geometry, blocks = mc.geometry(), mc.blocks()
    settle = None
    if cc.window == "auto":
        t0 = time.perf_counter()
        settle = worst_case_settle(geometry, blocks, cc.grid_pitch, mc.dt, cc.settle_tol, method=mc.method)
        window = settle.recommended
        log.info("auto L_C = %d from %d grid points (%.1f s)", window, len(settle.positions),
                 time.perf_counter() - t0)
    else:
        window = cc.window
    params = ControllerParams(window=window, degree=cc.degree, n=cc.n, n_up=cc.n_up, selector=cc.selector,
                              constraints=cc.constraints)
    model = MachineModel(geometry, blocks, mc.dt, window, mc.method)
    traj = make_trajectory(cfg.trajectory, geometry, mc.dt)
    overrides = {k: v for k, v in (("solver", cc.solver), ("switching", cc.switching)) if v is not None}
    rows, runs = run_comparison(traj, model, cfg.variants, params, selector=cc.selector, **overrides)
    Xd = np.concatenate([np.repeat(traj.X[:1], window, 0), traj.X, np.repeat(traj.X[-1:], window, 0)])
    out = write_outputs(cfg.out, cfg, rows, runs, Xd, window, mc.dt, settle)
    print(f"L_C = {window}" + (f" (auto, grid pitch {cc.grid_pitch:g} mm)" if settle else ""))
    print(f"{'variant':<9}{'time_s':>10}{'rms_um':>12}{'max_um':>12}{'improv_%':>10}")
    for r in rows:
        imp = "" if r["improvement_pct"] is None else f"{r['improvement_pct']:.1f}"
        print(f"{r['variant']:<9}{r['wall_time_s']:>10.3f}{r['rms_um']:>12.4f}{r['max_um']:>12.4f}{imp:>10}")
    print(f"wrote {out}")
    return 0


def cmd_validate_model(args, pgj=None):
    """``pgj`` may be injected (tests pass a deliberately corrupted one)."""
    if pgj is None:
        mc = parse_machine(load_yaml(args.machine, "machine")) if args.machine else parse_machine({})
        pgj = parameterize_gj(mc.blocks(), mc.geometry())
    pos = workspace_grid(pgj.geometry, args.grid_pitch)
    rep = validate_parameterization(pgj, pos)
    print(f"positions: {rep.n_positions}, frequencies: {rep.n_freqs}")
    print(f"max relative error: {rep.max_rel_error:.3e} at {np.round(rep.worst_position, 3).tolist()}")
    print(f"per-evaluation cost: {rep.eval_flops} flops, {1e6 * rep.eval_seconds:.2f} us")
    if rep.exact_identity:
        print("uncoupled model: parameterization is an exact identity")
    if not rep.max_rel_error <= args.tol:
        print(f"FAIL: error exceeds {args.tol:g}", file=sys.stderr)
        return 1
    print("OK")
    return 0


def main(argv=None, pgj=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_validate_model(args, pgj)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (LPVFBSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
