"""Receding-horizon control loops, closed-loop records and theorem monitors."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import sdp
from .data import (OUTPUT, STATE, ConsistencySet, DataMatrices, build_consistency_set,
                   build_data_matrices, compress_state, extend_state, sample_output_maps,
                   sample_sigma)
from .linalg import spectral_radius
from .synthesis import (CONSTRAINED, CONSTRAINED_IO, DEFAULT_CAPS, NUMERICAL_FAILURE, SOLVED,
                        UNCONSTRAINED, Floors, MultiplierCaps, SynthesisResult, synthesize)
from .system import LtiSystem, NormConstraints, Trajectory, step

log = logging.getLogger(__name__)

REUSE = "reuse-previous-gain"
ABORT = "abort"
FALLBACK = "fallback"
BOOTSTRAP = "bootstrap"


class InitialInfeasibility(RuntimeError):
    """The first synthesis step failed, so no guarantee applies to the run."""

    def __init__(self, k: int, status: str, record: "ClosedLoopRecord"):
        super().__init__(f"synthesis at the first step k={k} returned {status}")
        self.k, self.status, self.record = k, status, record


@dataclass
class ControllerConfig:
    variant: str = UNCONSTRAINED
    Q: np.ndarray = field(default_factory=lambda: np.eye(1))
    R: np.ndarray = field(default_factory=lambda: np.eye(1))
    constraints: NormConstraints | None = None
    run_length: int = 50
    horizon: int = 500
    fallback: str = REUSE
    x0: np.ndarray | None = None
    lag: int | None = None
    cost_window: tuple[int, int] | None = None
    compress: bool = True
    caps: MultiplierCaps = field(default_factory=lambda: DEFAULT_CAPS)
    floors: Floors = field(default_factory=Floors)
    cap_ladder: tuple[float, ...] = (1.0, 0.1, 0.01)
    solver: sdp.SolverOptions = field(default_factory=sdp.SolverOptions)
    convergence_tol: float | None = None

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if self.run_length < 1:
            raise ValueError("run length must be at least 1")
        if self.fallback not in (REUSE, ABORT):
            raise ValueError(f"unknown fallback policy {self.fallback!r}")
        if self.variant in (CONSTRAINED, CONSTRAINED_IO) and self.constraints is None:
            raise ValueError(f"variant {self.variant} needs norm constraints")

    def to_dict(self) -> dict:
        c = self.constraints
        return {
            "variant": self.variant, "Q": self.Q.tolist(), "R": self.R.tolist(),
            "constraints": None if c is None else {"u_max": c.u_max, "y_max": c.y_max},
            "run_length": self.run_length, "horizon": self.horizon, "fallback": self.fallback,
            "x0": None if self.x0 is None else np.asarray(self.x0).tolist(), "lag": self.lag,
            "cost_window": None if self.cost_window is None else list(self.cost_window),
            "compress": self.compress,
            "caps": {"alpha": self.caps.alpha, "tau": self.caps.tau},
            "cap_ladder": list(self.cap_ladder),
            "solver": {"feasibility_tol": self.solver.feasibility_tol,
                       "gap_tol": self.solver.gap_tol, "max_iters": self.solver.max_iters,
                       "retry_tol": self.solver.retry_tol},
        }


@dataclass
class StepRecord:
    k: int
    x: np.ndarray          # plant state (simulation only, never used by the controller)
    z: np.ndarray | None   # measured controller state (state or extended state)
    u: np.ndarray
    y: np.ndarray
    status: str
    eta: float = float("nan")
    bound: float = float("nan")
    gain: np.ndarray | None = None
    retried: bool = False
    cap_scale: float = 1.0
    result: SynthesisResult | None = field(default=None, repr=False)
    solve_time: float = 0.0  # wall-clock seconds; not serialized, so outputs stay reproducible


@dataclass
class ClosedLoopRecord:
    steps: list[StepRecord]
    config: ControllerConfig
    first_solved: int | None = None
    first_infeasible: int | None = None
    first_violation: int | None = None
    aborted: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def controlled(self) -> list[StepRecord]:
        return [s for s in self.steps if s.status != BOOTSTRAP]

    def j_bar(self, window: tuple[int, int] | None = None) -> float:
        window = window or self.config.cost_window
        q, r = self.config.Q, self.config.R
        total = 0.0
        for s in self.steps:
            if window is None and s.status == BOOTSTRAP:
                continue
            if window is not None and not (window[0] <= s.k <= window[1]):
                continue
            total += float(s.y @ q @ s.y + s.u @ r @ s.u)
        return total

    def all_solved(self) -> bool:
        return all(s.status == SOLVED for s in self.controlled)

    def header(self) -> list[str]:
        if not self.steps:
            return ["k", "eta", "bound", "status"]
        s = self.steps[0]
        return (["k"] + [f"u{i + 1}" for i in range(s.u.size)] + [f"y{i + 1}" for i in range(s.y.size)]
                + [f"x{i + 1}" for i in range(s.x.size)] + ["eta", "bound", "status"])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for s in self.steps:
                w.writerow([s.k, *map(repr, map(float, s.u)), *map(repr, map(float, s.y)),
                            *map(repr, map(float, s.x)), repr(float(s.eta)), repr(float(s.bound)),
                            s.status])

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "j_bar": self.j_bar(),
            "first_solved": self.first_solved,
            "first_infeasible": self.first_infeasible,
            "first_violation": self.first_violation,
            "aborted": self.aborted,
            "meta": self.meta,
            "steps": [{"k": s.k, "status": s.status, "eta": s.eta, "bound": s.bound,
                       "retried": s.retried, "cap_scale": s.cap_scale,
                       "u": s.u.tolist(), "y": s.y.tolist(), "x": s.x.tolist(),
                       "z": None if s.z is None else s.z.tolist(),
                       "gain": None if s.gain is None else s.gain.tolist()}
                      for s in self.steps],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ClosedLoopRecord":
        cfg = d["config"]
        c = cfg.get("constraints")
        config = ControllerConfig(
            variant=cfg["variant"], Q=cfg["Q"], R=cfg["R"],
            constraints=None if c is None else NormConstraints(c["u_max"], c["y_max"]),
            run_length=cfg["run_length"], horizon=cfg["horizon"], fallback=cfg["fallback"],
            x0=cfg.get("x0"), lag=cfg.get("lag"),
            cost_window=None if cfg.get("cost_window") is None else tuple(cfg["cost_window"]),
            compress=cfg.get("compress", True))
        steps = [StepRecord(s["k"], np.asarray(s["x"]), None if s["z"] is None else np.asarray(s["z"]),
                            np.asarray(s["u"]), np.asarray(s["y"]), s["status"], s["eta"], s["bound"],
                            None if s["gain"] is None else np.asarray(s["gain"]), s.get("retried", False),
                            s.get("cap_scale", 1.0))
                 for s in d["steps"]]
        return cls(steps, config, d.get("first_solved"), d.get("first_infeasible"),
                   d.get("first_violation"), d.get("aborted", False), d.get("meta", {}))

    def save(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
        self.to_csv(csv_path)
        json_path.write_text(self.to_json())
        return csv_path, json_path


# -- shared loop -------------------------------------------------------------

def _violates(c: NormConstraints | None, u, y) -> bool:
    if c is None:
        return False
    return bool(np.linalg.norm(u) > c.u_max or np.linalg.norm(y) > c.y_max)


def synthesize_with_ladder(variant: str, cs: ConsistencySet, z, c: NormConstraints | None,
                           solver: sdp.SolverOptions, floors: Floors, caps: MultiplierCaps,
                           ladder=(1.0, 0.1, 0.01)) -> tuple[SynthesisResult, float]:
    """One synthesis, retried with smaller multiplier caps after numerical failures.

    Lowering a cap only shrinks the feasible set, so a ladder step can never
    turn an infeasible program into a solved one; it only trades optimality
    for conditioning. A certified infeasibility is returned immediately.
    """
    if caps.alpha is None and caps.tau is None:
        ladder = (1.0,)
    res, scale = None, 1.0
    for scale in ladder or (1.0,):
        scaled = MultiplierCaps(None if caps.alpha is None else caps.alpha * scale,
                                None if caps.tau is None else caps.tau * scale)
        res = synthesize(variant, cs, z, c, solver, floors, scaled)
        if res.status != NUMERICAL_FAILURE:
            break
        log.info("numerical failure with caps %s; trying the next cap", scaled)
    return res, scale


def synthesize_step(cs: ConsistencySet, cfg: ControllerConfig, z) -> tuple[SynthesisResult, float]:
    return synthesize_with_ladder(cfg.variant, cs, z, cfg.constraints, cfg.solver, cfg.floors,
                                  cfg.caps, cfg.cap_ladder)


def _loop(plant: LtiSystem, cs: ConsistencySet, cfg: ControllerConfig, x0, measure,
          k_start: int, steps: list[StepRecord]) -> ClosedLoopRecord:
    """Run synthesis/apply for ``cfg.run_length`` steps starting at ``k_start``.

    ``measure(k, x, steps)`` returns the controller state at time ``k``.
    """
    rec = ClosedLoopRecord(steps, cfg)
    for s in steps:
        if rec.first_violation is None and _violates(cfg.constraints, s.u, s.y):
            rec.first_violation = s.k
    x = np.asarray(x0, dtype=float).copy()
    gain = None
    for k in range(k_start, k_start + cfg.run_length):
        z = measure(k, x, steps)
        t0 = time.perf_counter()
        res, cap_scale = synthesize_step(cs, cfg, z)
        elapsed = time.perf_counter() - t0
        status, retried = res.status, bool(res.outcome and res.outcome.retried)
        if res.solved:
            gain = res.gain
            if rec.first_solved is None:
                rec.first_solved = k
        else:
            log.warning("synthesis at k=%d returned %s", k, res.status)
            if rec.first_infeasible is None and rec.first_solved is not None:
                rec.first_infeasible = k
            if rec.first_solved is None:
                steps.append(StepRecord(k, x.copy(), z, np.zeros(plant.m), plant.C @ x, status,
                                        retried=retried, cap_scale=cap_scale, result=res))
                raise InitialInfeasibility(k, res.status, rec)
            if cfg.fallback == ABORT:
                rec.aborted = True
                steps.append(StepRecord(k, x.copy(), z, np.zeros(plant.m), plant.C @ x, status,
                                        retried=retried, cap_scale=cap_scale, result=res))
                break
            status = FALLBACK
        u = gain @ z
        x_next, y = step(plant, x, u)
        steps.append(StepRecord(k, x.copy(), z, u, y, status, res.eta, res.bound, gain.copy(),
                                retried, cap_scale, res, elapsed))
        if rec.first_violation is None and _violates(cfg.constraints, u, y):
            rec.first_violation = k
        x = x_next
    return rec


def _state_data(traj: Trajectory, cfg: ControllerConfig) -> tuple[DataMatrices, ConsistencySet]:
    d = build_data_matrices(traj, STATE)
    return d, build_consistency_set(d, cfg.Q, cfg.R)


def output_data(traj: Trajectory, lag: int, Q, R, compress: bool = True):
    d = build_data_matrices(traj, OUTPUT, lag)
    if compress:
        d = compress_state(d)
    return d, build_consistency_set(d, Q, R)


def run_algorithm1(plant: LtiSystem, traj: Trajectory, cfg: ControllerConfig,
                   data=None) -> ClosedLoopRecord:
    """State feedback without norm constraints, starting at ``k = 0``."""
    d, cs = data or _state_data(traj, cfg)
    x0 = traj.states[0] if cfg.x0 is None else cfg.x0
    rec = _loop(plant, cs, cfg, x0, lambda k, x, steps: x.copy(), 0, [])
    rec.meta["data"] = {"mode": STATE, "samples": d.samples}
    return rec


def run_algorithm2(plant: LtiSystem, traj: Trajectory, cfg: ControllerConfig,
                   data=None) -> ClosedLoopRecord:
    """State feedback with input and output norm bounds."""
    if cfg.variant != CONSTRAINED:
        raise ValueError("algorithm 2 runs the constrained-state variant")
    return run_algorithm1(plant, traj, cfg, data)


def run_algorithm3(plant: LtiSystem, traj_io: Trajectory, cfg: ControllerConfig,
                   data=None) -> ClosedLoopRecord:
    """Output feedback on the extended state, starting at ``k = n``.

    The first ``n`` inputs are the last ``n`` excitation inputs, so the live
    window continues the recorded experiment.
    """
    if cfg.variant != CONSTRAINED_IO:
        raise ValueError("algorithm 3 runs the constrained-io variant")
    n = cfg.lag
    if n is None or n < 1:
        raise ValueError("algorithm 3 needs the plant order as the window length")
    d, cs = data or output_data(traj_io, n, cfg.Q, cfg.R, cfg.compress)
    x = np.zeros(plant.n) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)
    steps: list[StepRecord] = []
    for k, u in enumerate(traj_io.inputs[-n:]):
        x_next, y = step(plant, x, u)
        steps.append(StepRecord(k, x.copy(), None, u.copy(), y, BOOTSTRAP))
        x = x_next

    def measure(k, _x, hist):
        us = np.array([s.u for s in hist[k - n:k]])
        ys = np.array([s.y for s in hist[k - n:k]])
        z = extend_state(us, ys)
        res = d.projection_residual(z)
        if res > 1e-8 * max(1.0, np.linalg.norm(z)):
            log.warning("extended state at k=%d leaves the data subspace (residual %.2e)", k, res)
        return z

    rec = _loop(plant, cs, cfg, x, measure, n, steps)
    rec.meta["data"] = {"mode": OUTPUT, "samples": d.samples, "lag": n,
                        "coordinates": d.n, "extended_dim": d.full_state_dim}
    return rec


def run(plant: LtiSystem, traj: Trajectory, cfg: ControllerConfig, data=None) -> ClosedLoopRecord:
    if cfg.variant == UNCONSTRAINED:
        return run_algorithm1(plant, traj, cfg, data)
    if cfg.variant == CONSTRAINED:
        return run_algorithm2(plant, traj, cfg, data)
    return run_algorithm3(plant, traj, cfg, data)


# -- monitors --------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    margin: float = float("nan")
    detail: str = ""
    step: int | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "margin": self.margin,
                "detail": self.detail, "step": self.step}


@dataclass
class TheoremReport:
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}


def set_gain(cs: ConsistencySet, gain: np.ndarray) -> np.ndarray:
    """Restrict a gain on the measured state to the set's coordinates."""
    basis = cs.meta.get("basis")
    return gain if basis is None else gain @ np.asarray(basis)


def robust_radii(cs: ConsistencySet, d: DataMatrices, gain: np.ndarray, samples: int = 100,
                 seed: int = 0) -> tuple[list[float], list[float]]:
    """Closed-loop spectral radii and membership residuals over sampled members."""
    from .data import membership_residual
    f = set_gain(cs, gain)
    draw = sample_sigma(cs, d, samples, seed=seed)
    members = draw.systems[1:]
    return ([spectral_radius(s.A + s.B @ f) for s in members],
            [membership_residual(cs, s) for s in members])


def predicted_outputs(cs: ConsistencySet, d: DataMatrices, gain: np.ndarray, z_now,
                      samples: int = 50, horizon: int = 20, seed: int = 0) -> float:
    """Largest predicted output norm over sampled output maps and ``i = 0..horizon``."""
    f = set_gain(cs, gain)
    basis = cs.meta.get("basis")
    z = np.asarray(z_now, dtype=float)
    if basis is not None and z.size != cs.n:
        z = np.asarray(basis).T @ z
    draw = sample_sigma(cs, d, samples, seed=seed)
    maps, _ = sample_output_maps(d, samples, seed=seed + 1)
    worst = 0.0
    for member, c in zip(draw.systems[1:], maps[1:]):
        acl = member.A + member.B @ f
        x = z.copy()
        for _ in range(horizon + 1):
            worst = max(worst, float(np.linalg.norm(c @ x)))
            x = acl @ x
    return worst


def monitor_theorems(rec: ClosedLoopRecord, cs: ConsistencySet, d: DataMatrices,
                     samples: int = 100, seed: int = 0) -> TheoremReport:
    checks = []
    # (a) bound decrease between consecutive optimal solves
    worst, where = -np.inf, None
    ctl = rec.controlled
    for a, b in zip(ctl, ctl[1:]):
        if a.status == SOLVED and b.status == SOLVED and b.k == a.k + 1 and np.any(a.z):
            gap = (b.bound - a.bound) / max(1.0, abs(a.bound))
            if gap > worst:
                worst, where = gap, b.k
    ok = worst < 1e-9
    checks.append(Check("bound-decrease", bool(ok), float(-worst) if where is not None else np.inf,
                        "largest relative increase of the certified bound", where if not ok else None))
    # (b) robust stability of the final gain
    gains = [s for s in ctl if s.gain is not None]
    if gains:
        radii, _ = robust_radii(cs, d, gains[-1].gain, samples, seed)
        rho = max(radii)
        checks.append(Check("robust-stability", rho < 1, 1 - rho,
                            f"max spectral radius over {len(radii)} sampled members", gains[-1].k))
    else:
        checks.append(Check("robust-stability", False, np.nan, "no gain was synthesized"))
    # (c) recursive feasibility
    bad = next((s.k for s in ctl if rec.first_solved is not None and s.k > rec.first_solved
                and s.status != SOLVED), None)
    checks.append(Check("recursive-feasibility", bad is None and not rec.aborted, np.nan,
                        "every step after the first solved step solved", bad))
    # (d) norm constraints on realized signals
    c = rec.config.constraints
    if c is not None:
        mu = max(np.linalg.norm(s.u) - c.u_max for s in rec.steps)
        my = max(np.linalg.norm(s.y) - c.y_max for s in rec.steps)
        checks.append(Check("constraints", rec.first_violation is None, float(-max(mu, my)),
                            "realized input/output norms within bounds", rec.first_violation))
    # output convergence (extended-state loop)
    if rec.config.convergence_tol is not None:
        y_last = float(np.linalg.norm(rec.steps[-1].y))
        checks.append(Check("output-convergence", y_last <= rec.config.convergence_tol,
                            rec.config.convergence_tol - y_last, "final output norm",
                            rec.steps[-1].k))
    return TheoremReport(checks)
