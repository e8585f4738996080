"""Solver-agnostic conic programs and the cvxopt-backed solve routine.

A program is ``minimize c @ x`` subject to ``A @ x + b`` lying in a product of
cones. Every cone slot is stated as *membership*: nonnegative scalars, or
symmetric matrices that must be positive semidefinite, given in svec
coordinates (see :func:`rdpc.linalg.svec`).
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .linalg import smat, svec_dim

log = logging.getLogger(__name__)

MAX_ITERS_ENV = "RDPC_SOLVER_MAX_ITERS"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"
ITERATION_LIMIT = "iteration-limit"


class MalformedProgram(ValueError):
    pass


@dataclass(frozen=True)
class Cone:
    kind: str  # "psd" or "nonneg"
    dim: int   # matrix order for psd, number of scalars for nonneg
    name: str = ""

    @property
    def size(self) -> int:
        return svec_dim(self.dim) if self.kind == "psd" else self.dim


@dataclass
class ConicProgram:
    objective: np.ndarray
    cones: list[Cone]
    A: np.ndarray
    b: np.ndarray
    variable_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).ravel()
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()

    @property
    def num_variables(self) -> int:
        return self.objective.size

    def validate(self) -> None:
        rows = sum(c.size for c in self.cones)
        for c in self.cones:
            if c.kind not in ("psd", "nonneg"):
                raise MalformedProgram(f"unknown cone kind {c.kind!r}")
            if c.dim < 1:
                raise MalformedProgram(f"cone {c.name!r} has dimension {c.dim}")
        if self.A.shape != (rows, self.num_variables):
            raise MalformedProgram(
                f"constraint map is {self.A.shape}, cones need {(rows, self.num_variables)}")
        if self.b.size != rows:
            raise MalformedProgram(f"offset has length {self.b.size}, cones need {rows}")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.objective))):
            raise MalformedProgram("program contains non-finite numbers")

    def slots(self, x: np.ndarray) -> list[tuple[Cone, np.ndarray]]:
        """Materialize every cone slot at ``x`` (matrices for psd cones)."""
        vals = self.A @ np.asarray(x, dtype=float) + self.b
        out, start = [], 0
        for c in self.cones:
            v = vals[start:start + c.size]
            out.append((c, smat(v) if c.kind == "psd" else v))
            start += c.size
        return out

    def rescaled(self, var_scale, cone_scales, objective_scale: float = 1.0) -> "ConicProgram":
        """Equivalent program in the variables ``x' = x / var_scale``.

        ``cone_scales[i]`` holds positive weights for cone ``i``: a vector ``t``
        for a psd cone (the slot becomes ``diag(t) M diag(t)``, a congruence)
        or per-entry weights for a nonnegative cone. Both maps preserve cone
        membership, so feasible points correspond one to one.
        """
        d = np.asarray(var_scale, dtype=float)
        rows = []
        for c, t in zip(self.cones, cone_scales):
            t = np.broadcast_to(np.asarray(t, dtype=float), (c.dim,))
            if c.kind == "psd":
                iu = np.triu_indices(c.dim)
                rows.append(t[iu[0]] * t[iu[1]])
            else:
                rows.append(t)
        w = np.concatenate(rows)
        return ConicProgram(self.objective * d * objective_scale, list(self.cones),
                            (w[:, None] * self.A) * d[None, :], w * self.b,
                            list(self.variable_names))

    def to_dict(self) -> dict:
        return {
            "objective": self.objective.tolist(),
            "cones": [{"kind": c.kind, "dim": c.dim, "name": c.name} for c in self.cones],
            "A": {"shape": list(self.A.shape), "data": self.A.ravel().tolist()},
            "b": self.b.tolist(),
            "variables": list(self.variable_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConicProgram":
        a = np.asarray(d["A"]["data"], dtype=float).reshape(d["A"]["shape"])
        cones = [Cone(c["kind"], int(c["dim"]), c.get("name", "")) for c in d["cones"]]
        p = cls(np.asarray(d["objective"]), cones, a, np.asarray(d["b"]), list(d.get("variables", [])))
        p.validate()
        return p

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class SolverOptions:
    feasibility_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iters: int | None = None
    retry_tol: float | None = 1e-6

    def iteration_limit(self) -> int:
        if self.max_iters is not None:
            return int(self.max_iters)
        env = os.environ.get(MAX_ITERS_ENV)
        return int(env) if env else 100


@dataclass
class SolveOutcome:
    status: str
    primal: np.ndarray
    objective_value: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int = 0
    retried: bool = False
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _cvxopt_matrices(p: ConicProgram):
    """Reorder slots for cvxopt: scalar rows first, then full column-major psd blocks."""
    lin_rows, psd_blocks = [], []
    start = 0
    for c in p.cones:
        rows = slice(start, start + c.size)
        if c.kind == "nonneg":
            lin_rows.append((p.A[rows], p.b[rows]))
        else:
            d = c.dim
            iu = np.triu_indices(d)
            weight = np.where(iu[0] == iu[1], 1.0, 1.0 / np.sqrt(2.0))
            ga = p.A[rows] * weight[:, None]
            hb = p.b[rows] * weight
            full_a = np.zeros((d * d, p.num_variables))
            full_b = np.zeros(d * d)
            # column-major index of (i, j) is j * d + i; fill both triangles
            for idx in (iu[0] + iu[1] * d, iu[1] + iu[0] * d):
                full_a[idx] = ga
                full_b[idx] = hb
            psd_blocks.append((full_a, full_b, d))
        start += c.size
    a_parts = [r[0] for r in lin_rows] + [b[0] for b in psd_blocks]
    b_parts = [r[1] for r in lin_rows] + [b[1] for b in psd_blocks]
    n_lin = sum(r[0].shape[0] for r in lin_rows)
    dims = {"l": n_lin, "q": [], "s": [b[2] for b in psd_blocks]}
    a = np.vstack(a_parts) if a_parts else np.zeros((0, p.num_variables))
    b = np.concatenate(b_parts) if b_parts else np.zeros(0)
    return a, b, dims


def _solve_cvxopt(p: ConicProgram, feastol: float, gaptol: float, max_iters: int) -> SolveOutcome:
    import cvxopt
    from cvxopt import solvers

    a, b, dims = _cvxopt_matrices(p)
    c = cvxopt.matrix(p.objective)
    g = cvxopt.matrix(-a)
    h = cvxopt.matrix(b)
    opts = {"show_progress": False, "feastol": feastol, "abstol": gaptol,
            "reltol": gaptol, "maxiters": max_iters}
    nan = np.full(p.num_variables, np.nan)
    try:
        sol = solvers.conelp(c, g, h, dims, options=opts)
    except (ArithmeticError, ValueError) as exc:
        return SolveOutcome(NUMERICAL_FAILURE, nan, np.nan, np.inf, np.inf, np.inf, message=str(exc))
    status = sol["status"]
    x = np.array(sol["x"]).ravel() if sol["x"] is not None else nan
    iters = int(sol.get("iterations", 0))
    if status == "optimal":
        mapped = OPTIMAL
    elif status == "primal infeasible":
        mapped = INFEASIBLE
    elif status == "dual infeasible":
        mapped = UNBOUNDED
    else:
        mapped = ITERATION_LIMIT if iters >= max_iters else NUMERICAL_FAILURE
    obj = float(p.objective @ x) if np.all(np.isfinite(x)) else np.nan

    def _f(key):
        v = sol.get(key)
        return float(v) if v is not None else np.inf

    return SolveOutcome(mapped, x, obj, _f("primal infeasibility"), _f("dual infeasibility"),
                        _f("gap"), iterations=iters, message=status)


def solve(p: ConicProgram, opts: SolverOptions | None = None) -> SolveOutcome:
    """Minimize the program's objective.

    A numerical failure or iteration-limit outcome is retried once with the
    tolerances loosened to ``opts.retry_tol``; the retry is flagged on the
    returned outcome.
    """
    opts = opts or SolverOptions()
    p.validate()
    limit = opts.iteration_limit()
    out = _solve_cvxopt(p, opts.feasibility_tol, opts.gap_tol, limit)
    if out.status in (NUMERICAL_FAILURE, ITERATION_LIMIT) and opts.retry_tol:
        log.info("solver returned %s (%s); retrying at tolerance %g",
                 out.status, out.message, opts.retry_tol)
        out = replace(_solve_cvxopt(p, opts.retry_tol, opts.retry_tol, limit), retried=True)
    return out


@dataclass
class SlotCheck:
    name: str
    kind: str
    min_value: float
    scale: float

    @property
    def relative_violation(self) -> float:
        return max(0.0, -self.min_value) / max(self.scale, 1.0)


@dataclass
class VerificationReport:
    slots: list[SlotCheck]

    @property
    def worst(self) -> SlotCheck | None:
        return max(self.slots, key=lambda s: s.relative_violation, default=None)

    def max_violation(self) -> float:
        w = self.worst
        return w.relative_violation if w else 0.0

    def passed(self, rtol: float = 1e-7, atol: float = 1e-12) -> bool:
        return all(s.min_value >= -rtol * s.scale - atol for s in self.slots)

    def violations(self, rtol: float = 1e-7, atol: float = 1e-12) -> list[SlotCheck]:
        return [s for s in self.slots if s.min_value < -rtol * s.scale - atol]


def verify_solution(p: ConicProgram, primal: Sequence[float]) -> VerificationReport:
    """Recompute cone memberships from scratch, independent of the solver.

    PSD slots are checked by eigenvalues relative to their Frobenius norm;
    scalar slots are checked individually, relative to their own constant term
    (so sign conditions with a zero offset get the absolute tolerance only).
    """
    checks = []
    x = np.asarray(primal, dtype=float)
    if x.shape != (p.num_variables,) or not np.all(np.isfinite(x)):
        return VerificationReport([SlotCheck("primal", "invalid", -np.inf, 1.0)])
    start = 0
    for cone, val in p.slots(x):
        if cone.kind == "psd":
            checks.append(SlotCheck(cone.name, "psd", float(np.linalg.eigvalsh(val)[0]),
                                    float(np.linalg.norm(val))))
        else:
            for i, v in enumerate(val):
                checks.append(SlotCheck(f"{cone.name}[{i}]", "nonneg", float(v),
                                        float(abs(p.b[start + i]))))
        start += cone.size
    return VerificationReport(checks)
