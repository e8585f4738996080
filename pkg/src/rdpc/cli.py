"""Command-line entry point: ``rdpc collect|run|verify|reproduce-batch-reactor``.

Exit codes: 0 success, 2 configuration or malformed input, 3 simulation
blow-up, 4 output directory not writable, 5 infeasible first synthesis step,
6 a theorem monitor or verification check failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import sdp
from .config import ConfigError, ExperimentConfig, load_config, shipped_config
from .controller import InitialInfeasibility, monitor_theorems, output_data, run
from .data import (OUTPUT, STATE, ConsistencySet, DataMatrices, build_consistency_set,
                   build_data_matrices, membership_residual, sample_sigma)
from .linalg import finsler_preconditions
from .synthesis import CONSTRAINED_IO
from .system import SimulationBlowUp, Trajectory, collect, replay_residual, uniform_excitation

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_OUTPUT, EXIT_INFEASIBLE, EXIT_MONITOR = 0, 2, 3, 4, 5, 6

log = logging.getLogger("rdpc")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _outdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(EXIT_OUTPUT, f"output directory {path} is not writable: {exc}") from exc
    return path


def _load_trajectory(path: Path) -> Trajectory:
    try:
        if path.suffix == ".json":
            return Trajectory.from_json(path.read_text())
        return Trajectory.from_csv(path)
    except (OSError, ValueError, KeyError, IndexError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot read trajectory {path}: {exc}") from exc


def collect_from_config(cfg: ExperimentConfig) -> Trajectory:
    if cfg.trajectory is not None:
        return _load_trajectory(cfg.trajectory)
    e = cfg.excitation
    sys_ = cfg.system
    u = uniform_excitation(e.length, sys_.m, e.seed, e.low, e.high)
    x0 = np.zeros(sys_.n) if e.x0 is None else e.x0
    try:
        return collect(sys_, x0, u, meta={"seed": e.seed, "T": e.length, "system": sys_.name,
                                          "interval": [e.low, e.high]})
    except SimulationBlowUp as exc:
        raise CliError(EXIT_BLOWUP, str(exc)) from exc


def cmd_collect(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(Path(args.out) if args.out else cfg.output_dir)
    traj = collect_from_config(cfg)
    csv_path, json_path = traj.save(out / "trajectory")
    res = replay_residual(cfg.system, traj)
    print(f"wrote {csv_path} and {json_path}")
    print(f"replay residual {res:.3e}")
    return EXIT_OK


def _data_for(cfg: ExperimentConfig, traj: Trajectory):
    ctl = cfg.controller
    if traj.p == 0:
        raise CliError(EXIT_CONFIG, "trajectory has no output channels")
    if ctl.variant == CONSTRAINED_IO:
        if traj.length <= ctl.lag:
            raise CliError(EXIT_CONFIG, f"trajectory of length {traj.length} is too short "
                                        f"for window length {ctl.lag}")
        return output_data(traj, ctl.lag, ctl.Q, ctl.R, ctl.compress)
    if traj.states is None:
        raise CliError(EXIT_CONFIG, f"variant {ctl.variant} needs recorded states")
    d = build_data_matrices(traj, STATE)
    return d, build_consistency_set(d, ctl.Q, ctl.R)


def execute_run(cfg: ExperimentConfig, out: Path, quiet: bool = False) -> int:
    from .plotting import render_figure, write_plot_data

    traj = collect_from_config(cfg)
    if cfg.trajectory is None and "csv" in cfg.formats:
        traj.save(out / "trajectory")
    d, cs = _data_for(cfg, traj)
    for name, rep in cs.finsler_reports().items():
        if not rep.passed:
            log.warning("data Gram %s fails the Finsler preconditions: %s", name, rep.checks)
    (out / "consistency.json").write_text(json.dumps({"data": d.to_dict(), "set": cs.to_dict()}))
    try:
        rec = run(cfg.system, traj, cfg.controller, data=(d, cs))
    except InitialInfeasibility as exc:
        print(f"infeasible at the first step k={exc.k}: {exc.status}", file=sys.stderr)
        exc.record.save(out / "record")
        return EXIT_INFEASIBLE
    except SimulationBlowUp as exc:
        raise CliError(EXIT_BLOWUP, str(exc)) from exc
    rec.meta.update({"system": cfg.system.name, "excitation_seed":
                     None if cfg.excitation is None else cfg.excitation.seed})
    report = monitor_theorems(rec, cs, d, cfg.verify_samples, cfg.verify_seed)
    rec.save(out / "record")
    if "plot-data" in cfg.formats:
        write_plot_data(rec, out / "plot-data.csv")
    if "png" in cfg.formats:
        render_figure(rec, out / "figure.png",
                      title=f"{cfg.system.name}: closed-loop inputs and outputs")
    summary = {"j_bar": rec.j_bar(), "cost_window": cfg.controller.cost_window,
               "steps": len(rec.controlled), "all_solved": rec.all_solved(),
               "first_infeasible": rec.first_infeasible, "first_violation": rec.first_violation,
               "final_output_norm": float(np.linalg.norm(rec.steps[-1].y)),
               "monitors": report.to_dict()}
    (out / "report.json").write_text(json.dumps(summary, indent=1))
    if not quiet:
        print(f"J_bar = {rec.j_bar():.6f}")
        print(f"steps {len(rec.controlled)}, all solved: {rec.all_solved()}, "
              f"final |y| = {summary['final_output_norm']:.3e}")
        for c in report.checks:
            where = "" if c.step is None else f" (k={c.step})"
            print(f"  {'PASS' if c.passed else 'FAIL'} {c.name}{where}: margin {c.margin:.3g}")
        print(f"outputs in {out}")
    return EXIT_OK if report.passed else EXIT_MONITOR


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.trajectory:
        cfg.trajectory = Path(args.trajectory)
    out = _outdir(Path(args.out) if args.out else cfg.output_dir)
    return execute_run(cfg, out)


def cmd_reproduce(args) -> int:
    cfg = load_config(shipped_config("batch-reactor"))
    out = _outdir(Path(args.out) if args.out else cfg.output_dir)
    return execute_run(cfg, out)


def _load_snapshot(path: Path) -> tuple[DataMatrices, ConsistencySet]:
    try:
        doc = json.loads(path.read_text())
        return DataMatrices.from_dict(doc["data"]), ConsistencySet.from_dict(doc["set"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot read consistency snapshot {path}: {exc}") from exc


def verify_set(d: DataMatrices, cs: ConsistencySet, system=None, samples: int = 100,
               seed: int = 0) -> dict:
    """Structural checks on a data set; returns a JSON-ready report."""
    checks = []
    if d.samples == 0:
        return {"status": "vacuous", "passed": False, "checks": [
            {"name": "membership", "status": "vacuous",
             "detail": "no data columns: every system is consistent"}]}
    scale = max(1.0, float(np.linalg.norm(cs.N)))
    gram = float(np.linalg.norm(cs.N - cs.H @ cs.H.T)) / scale
    checks.append({"name": "gram-consistency", "passed": gram <= 1e-9, "residual": gram})
    gram_y = float(np.linalg.norm(cs.N_y - cs.H_y @ cs.H_y.T)) / max(1.0, float(np.linalg.norm(cs.N_y)))
    checks.append({"name": "gram-consistency-output", "passed": gram_y <= 1e-9, "residual": gram_y})
    for name, rep in cs.finsler_reports().items():
        checks.append({"name": f"finsler-{name}", "passed": rep.passed, **rep.to_dict()})
    draw = sample_sigma(cs, d, samples, seed=seed)
    worst = max(membership_residual(cs, s) for s in draw.systems)
    checks.append({"name": "sampling-soundness", "passed": worst <= 1e-8, "residual": worst,
                   "samples": len(draw.systems), "identified": draw.identified})
    if system is not None and d.mode == STATE:
        r = membership_residual(cs, system)
        checks.append({"name": "generator-membership", "passed": r <= 1e-9, "residual": r})
    passed = all(c["passed"] for c in checks)
    return {"status": "pass" if passed else "fail", "passed": passed, "checks": checks}


def cmd_verify(args) -> int:
    cfg = load_config(args.config) if args.config else None
    if args.set:
        d, cs = _load_snapshot(Path(args.set))
    elif args.trajectory and cfg is not None:
        traj = _load_trajectory(Path(args.trajectory))
        d, cs = _data_for(cfg, traj)
    else:
        raise CliError(EXIT_CONFIG, "verify needs --set, or --trajectory together with --config")
    samples = cfg.verify_samples if cfg else 100
    seed = cfg.verify_seed if cfg else 0
    try:
        report = verify_set(d, cs, cfg.system if cfg else None, samples, seed)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise CliError(EXIT_CONFIG, f"malformed data: {exc}") from exc
    if args.record:
        from .controller import ClosedLoopRecord
        try:
            rec = ClosedLoopRecord.from_dict(json.loads(Path(args.record).read_text()))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CliError(EXIT_CONFIG, f"cannot read record {args.record}: {exc}") from exc
        mon = monitor_theorems(rec, cs, d, samples, seed)
        report["monitors"] = mon.to_dict()
        report["passed"] = report["passed"] and mon.passed
        if report["status"] == "pass" and not mon.passed:
            report["status"] = "fail"
    text = json.dumps(report, indent=1)
    if args.report:
        out = Path(args.report)
        _outdir(out.parent if str(out.parent) else Path("."))
        out.write_text(text)
    for c in report["checks"]:
        print(f"  {c.get('status', 'PASS' if c.get('passed') else 'FAIL').upper()} {c['name']}")
    for c in report.get("monitors", {}).get("checks", []):
        print(f"  {'PASS' if c['passed'] else 'FAIL'} {c['name']}")
    print(f"verification: {report['status']}")
    return EXIT_OK if report["passed"] else EXIT_MONITOR


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rdpc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver retries and warnings")
    ap.add_argument("--max-iters", type=int, default=None,
                    help=f"solver iteration limit (also via ${sdp.MAX_ITERS_ENV})")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="simulate the excitation experiment and write the trajectory")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("run", help="run the closed loop and write record, plot data and report")
    p.add_argument("config")
    p.add_argument("--trajectory", help="use this trajectory file instead of simulating one")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="check data-set preconditions and (optionally) a record")
    p.add_argument("--config")
    p.add_argument("--set", help="consistency snapshot JSON written by 'run'")
    p.add_argument("--trajectory")
    p.add_argument("--record", help="closed-loop record JSON")
    p.add_argument("--report", help="where to write the JSON report")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("reproduce-batch-reactor", help="run the shipped batch-reactor experiment")
    p.add_argument("--out", help="output directory (default: out/batch-reactor)")
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.max_iters is not None:
        os.environ[sdp.MAX_ITERS_ENV] = str(args.max_iters)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
