"""Command-line pipeline: simulate, reconstruct, evaluate, table, schedule.

Every command is a pure function of its config file plus explicit flag
overrides; reruns produce byte-identical data files. Exit codes: 0 success,
1 usage or validation error, 2 I/O error, 3 solver abort.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import arrayio, metrics
from .arrayio import DataFormatError
from .config import FIDELITIES, PROTOCOL_KEYS, RunConfig, load_config
from .phantom import ground_truth, simulate_sinogram
from .radon import build_operator
from .solver import SolverAbort, joint_solve, joint_solve_pyramid

ENV_OUT_DIR = "DYNTOMO_OUT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="dyntomo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="JSON run configuration (defaults apply if omitted)")
        p.add_argument("--out", type=Path, default=None,
                       help=f"output directory (default: config, then ${ENV_OUT_DIR})")
        p.add_argument("--seed", type=int, default=None,
                       help="override the global seed")
        p.add_argument("--threads", type=int, default=None,
                       help="cap internal parallelism (never changes outputs)")
        p.add_argument("--protocol", choices=sorted(PROTOCOL_KEYS),
                       default=None, help="override the sampling protocol")
        p.add_argument("--fidelity", choices=FIDELITIES, default=None,
                       help="override the data fidelity norm")

    p_sim = sub.add_parser("simulate", help="write sinogram + ground truth")
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_rec = sub.add_parser("reconstruct", help="joint image + motion solve")
    p_rec.add_argument("sinogram", type=Path)
    common(p_rec)
    p_rec.set_defaults(func=cmd_reconstruct)

    p_eval = sub.add_parser("evaluate", help="metrics of recon vs truth")
    p_eval.add_argument("recon", type=Path)
    p_eval.add_argument("truth", type=Path)
    p_eval.add_argument("--label", default="run")
    common(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_tab = sub.add_parser("table", help="protocol x fidelity study")
    common(p_tab)
    p_tab.set_defaults(func=cmd_table)

    p_sch = sub.add_parser("schedule", help="print the angle schedule")
    common(p_sch)
    p_sch.set_defaults(func=cmd_schedule)
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config is not None else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "threads", None) is not None and args.threads < 1:
        raise ValueError(f"--threads must be >= 1, got {args.threads}")
    if args.protocol is not None:
        protocol, k = PROTOCOL_KEYS[args.protocol]
        cfg.schedule.protocol = protocol
        cfg.schedule.k = k
    if getattr(args, "fidelity", None) is not None:
        _apply_fidelity(cfg, args.fidelity)
    cfg.validate()
    return cfg


def _apply_fidelity(cfg: RunConfig, fidelity: str) -> None:
    cfg.solver.p = 1 if fidelity == "l1" else 2
    weights = cfg.table.params.get(fidelity, {})
    for name in ("alpha", "beta", "gamma"):
        if name in weights:
            setattr(cfg.solver, name, float(weights[name]))


def _out_dir(args, cfg: RunConfig) -> Path:
    if args.out is not None:
        out = Path(args.out)
    elif cfg.out_dir:
        out = Path(cfg.out_dir)
    elif os.environ.get(ENV_OUT_DIR):
        out = Path(os.environ[ENV_OUT_DIR])
    else:
        out = Path("out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _simulate_files(cfg: RunConfig, out: Path, noise_label: str = "") -> tuple[Path, Path]:
    if cfg.schedule_n_t() != cfg.phantom.n_t:
        raise ValueError(
            f"schedule length {cfg.schedule_n_t()} does not match phantom "
            f"n_t {cfg.phantom.n_t}")
    schedule = cfg.build_schedule()
    det = cfg.resolved_detector()
    stack = simulate_sinogram(cfg.phantom, schedule, cfg.grid, det,
                              cfg.noise_level, cfg.noise_seed(noise_label))
    truth = ground_truth(cfg.phantom)
    sino_path = out / "sinogram.bin"
    truth_path = out / "truth.bin"
    arrayio.write_sinogram(sino_path, stack, extra_meta={
        "protocol": schedule.label, "schedule_seed": schedule.seed,
        "grid_n": cfg.grid.n, "pixel_size": cfg.grid.pixel_size,
        "bin_spacing": det.bin_spacing})
    arrayio.write_image_sequence(truth_path, truth)
    print(f"simulated {stack.n_t} steps, {stack.total_rays} rays, "
          f"noise_level={cfg.noise_level} -> {sino_path}")
    return sino_path, truth_path


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    _simulate_files(cfg, out)
    return 0


def _reconstruct_files(cfg: RunConfig, sino_path: Path, out: Path) -> tuple[Path, Path]:
    stack = arrayio.read_sinogram(sino_path)
    det = cfg.resolved_detector()
    if stack.n_bins != det.n_bins:
        raise ValueError(
            f"sinogram has {stack.n_bins} detector bins but config resolves "
            f"to {det.n_bins}")
    if stack.n_t != cfg.phantom.n_t:
        raise ValueError(
            f"sinogram has {stack.n_t} steps but config phantom has "
            f"{cfg.phantom.n_t}")
    op = build_operator(cfg.grid, det, stack.angles)
    solve = joint_solve_pyramid if cfg.solver.pyramid_levels > 1 else joint_solve
    result = solve(op, stack, cfg.solver)
    recon_path = out / "recon.bin"
    flow_path = out / "flow.bin"
    fidelity = "l1" if cfg.solver.p == 1 else "l2"
    arrayio.write_image_sequence(recon_path, result.u,
                                 extra_meta={"fidelity": fidelity})
    arrayio.write_flow_sequence(flow_path, result.v)
    arrayio.write_trace_csv(out / "trace.csv", result.energy_trace,
                            result.outer_residual_trace, result.wall_seconds)
    print(f"reconstructed {result.u.shape[0]} frames + "
          f"{result.v.shape[0]} flow fields -> {recon_path}")
    return recon_path, flow_path


def cmd_reconstruct(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    _reconstruct_files(cfg, args.sinogram, out)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    recon = arrayio.read_image_sequence(args.recon)
    truth = arrayio.read_image_sequence(args.truth)
    if recon.shape != truth.shape:
        raise ValueError(
            f"reconstruction shape {recon.shape} does not match ground "
            f"truth shape {truth.shape}")
    report = metrics.evaluate_sequences(recon, truth)
    arrayio.write_report_csv(out / "report.csv", args.label, report)
    arrayio.write_report_json(out / "report.json", args.label, report)
    print(f"rel_l1={report.rel_l1:.6g} rel_l2={report.rel_l2:.6g} "
          f"ssim={report.ssim:.6g}")
    return 0


def cmd_table(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    cells = [tuple(c) for c in cfg.table.cells]
    if args.protocol is not None:
        cells = [c for c in cells if c[0] == args.protocol]
    if args.fidelity is not None:
        cells = [c for c in cells if c[1] == args.fidelity]
    if not cells:
        raise ValueError("table has no cells after filtering")

    rows = []
    first_error: BaseException | None = None
    sino_cache: dict[str, tuple[Path, Path]] = {}
    for key, fid in cells:
        cell_dir = out / f"{key}-{fid}"
        cell_dir.mkdir(parents=True, exist_ok=True)
        try:
            cell_cfg = load_config(args.config) if args.config is not None \
                else RunConfig()
            cell_cfg.seed = cfg.seed
            protocol, k = PROTOCOL_KEYS[key]
            cell_cfg.schedule.protocol = protocol
            cell_cfg.schedule.k = k
            _apply_fidelity(cell_cfg, fid)
            cell_cfg.validate()
            if key not in sino_cache:
                sino_dir = out / f"data-{key}"
                sino_dir.mkdir(parents=True, exist_ok=True)
                sino_cache[key] = _simulate_files(cell_cfg, sino_dir,
                                                  noise_label=key)
            sino_path, truth_path = sino_cache[key]
            recon_path, _ = _reconstruct_files(cell_cfg, sino_path, cell_dir)
            recon = arrayio.read_image_sequence(recon_path)
            truth = arrayio.read_image_sequence(truth_path)
            report = metrics.evaluate_sequences(recon, truth)
            rows.append((key, fid, report.rel_l1, report.rel_l2,
                         report.ssim, "ok"))
        except (ValueError, OSError, SolverAbort) as exc:
            if first_error is None:
                first_error = exc
            rows.append((key, fid, None, None, None,
                         f"failed:{type(exc).__name__}"))
            print(f"cell {key}/{fid} failed: {exc}", file=sys.stderr)

    arrayio.write_table_csv(out / "table.csv", rows)
    print(f"wrote {len(rows)} rows -> {out / 'table.csv'}")
    if first_error is not None:
        raise first_error
    return 0


def cmd_schedule(args) -> int:
    cfg = _load(args)
    if cfg.schedule_n_t() != cfg.phantom.n_t:
        raise ValueError(
            f"schedule length {cfg.schedule_n_t()} does not match phantom "
            f"n_t {cfg.phantom.n_t}")
    schedule = cfg.build_schedule()
    print(f"protocol={schedule.label} steps={schedule.n_t} "
          f"seed={schedule.seed}")
    for i, angles in enumerate(schedule.per_step):
        listed = " ".join(f"{a:.12g}" for a in np.ravel(angles))
        print(f"step {i}: {listed}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"dyntomo: usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except SolverAbort as exc:
        print(f"dyntomo: solver abort: {exc}", file=sys.stderr)
        return 3
    except DataFormatError as exc:
        print(f"dyntomo: bad data file: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError, PermissionError,
            OSError) as exc:
        print(f"dyntomo: i/o error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"dyntomo: invalid input: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
