"""Assembly of the gain-synthesis semidefinite programs.

Three variants share one variable layout and one set of block builders:

* ``unconstrained-state`` -- original variables ``(alpha, beta, eta, S, Gamma)``;
* ``constrained-state`` -- scaled variables ``(alpha, beta, eta, tau, kappa, S, Gamma)``
  with input/output norm LMIs;
* ``constrained-io`` -- the constrained program on extended-state data.

All matrix inequalities are handed to the backend as "slot is PSD" after
negation, together with scalar floors that turn strict inequalities into
numerically meaningful ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import sdp
from .data import OUTPUT, ConsistencySet, DataMatrices, sample_sigma
from .linalg import BlockLayout, spectral_radius, svec, sym
from .system import NormConstraints

UNCONSTRAINED = "unconstrained-state"
CONSTRAINED = "constrained-state"
CONSTRAINED_IO = "constrained-io"
VARIANTS = (UNCONSTRAINED, CONSTRAINED, CONSTRAINED_IO)

EPS_BETA = 1e-7
EPS_ETA = 1e-9
EPS_KAPPA = 1e-7
EPS_GAMMA = 1e-8

VERIFY_RTOL = 1e-6
VERIFY_ATOL = 1e-8  # matches the default solver feasibility tolerance

SOLVED = "solved"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True)
class Floors:
    beta: float = EPS_BETA
    eta: float = EPS_ETA
    kappa: float = EPS_KAPPA
    gamma: float = EPS_GAMMA


@dataclass(frozen=True)
class MultiplierCaps:
    """Optional upper bounds on the S-procedure multipliers.

    Without a cap the optimum of the synthesis program is typically only
    approached as the data multiplier grows without bound, which interior
    point solvers handle poorly. ``alpha`` bounds the unscaled multiplier
    (the scaled program uses ``alpha_bar <= alpha * eta``, the same set);
    ``tau`` bounds the output-constraint multiplier directly.
    """

    alpha: float | None = None
    tau: float | None = None


DEFAULT_CAPS = MultiplierCaps(1e3, 1e3)


# -- variable layout -------------------------------------------------------

class VariableLayout:
    """Positions of the decision variables inside the flat decision vector."""

    def __init__(self, n: int, m: int, constrained: bool):
        self.n, self.m, self.constrained = n, m, constrained
        scalars = ["alpha", "beta", "eta"] + (["tau", "kappa"] if constrained else [])
        self.scalars = {name: i for i, name in enumerate(scalars)}
        self.s_start = len(scalars)
        self.g_start = self.s_start + m * n
        self.tri = np.triu_indices(n)
        self.size = self.g_start + len(self.tri[0])

    def names(self) -> list[str]:
        out = list(self.scalars)
        out += [f"S[{i},{j}]" for i in range(self.m) for j in range(self.n)]
        out += [f"Gamma[{i},{j}]" for i, j in zip(*self.tri)]
        return out

    def unpack(self, x) -> dict:
        x = np.asarray(x, dtype=float)
        out = {k: float(x[i]) for k, i in self.scalars.items()}
        out["S"] = x[self.s_start:self.g_start].reshape(self.m, self.n)
        g = np.zeros((self.n, self.n))
        g[self.tri] = x[self.g_start:]
        out["Gamma"] = g + np.triu(g, 1).T
        return out

    def pack(self, values: dict) -> np.ndarray:
        x = np.zeros(self.size)
        for k, i in self.scalars.items():
            x[i] = values.get(k, 0.0)
        x[self.s_start:self.g_start] = np.asarray(values["S"], dtype=float).ravel()
        x[self.g_start:] = np.asarray(values["Gamma"], dtype=float)[self.tri]
        return x


# -- block builders --------------------------------------------------------

def cost_block(gamma, s, m: int, p: int, eta: float | None = None) -> np.ndarray:
    """The 5x5 block matrix pairing the Lyapunov decrease with the stage cost.

    Blocks have sizes ``(n, m+p, n, m, n)``. With ``eta=None`` the second
    diagonal block is ``-I`` (original variables); otherwise it is ``-eta*I``
    and ``gamma``/``s`` are read as the scaled variables.
    """
    gamma = np.asarray(gamma, dtype=float)
    s = np.asarray(s, dtype=float)
    n = gamma.shape[0]
    lay = BlockLayout([n, m + p, n, m, n])
    out = lay.zeros()
    lay.place(out, 0, 0, -gamma)
    lay.place(out, 1, 1, -1.0 if eta is None else -eta)
    lay.place(out, 2, 2, gamma)
    lay.place(out, 3, 2, s)
    lay.place(out, 3, 4, s)
    lay.place(out, 4, 4, -gamma)
    return out


def data_block(N, n: int) -> np.ndarray:
    """``diag(N, 0)`` padded with ``n`` zero rows/columns."""
    N = np.asarray(N, dtype=float)
    out = np.zeros((N.shape[0] + n, N.shape[0] + n))
    out[:N.shape[0], :N.shape[0]] = N
    return out


def output_block(gamma, s, p: int, y_max: float) -> np.ndarray:
    """The 4x4 output-bound block matrix with sizes ``(p, n, m, n)``."""
    gamma = np.asarray(gamma, dtype=float)
    s = np.asarray(s, dtype=float)
    n, m = gamma.shape[0], s.shape[0]
    lay = BlockLayout([p, n, m, n])
    out = lay.zeros()
    lay.place(out, 0, 0, -y_max ** 2)
    lay.place(out, 1, 1, gamma)
    lay.place(out, 2, 1, s)
    lay.place(out, 2, 3, s)
    lay.place(out, 3, 3, -gamma)
    return out


def state_block(x, gamma, lead: float) -> np.ndarray:
    """``[[-lead, x^T], [x, -gamma]]``."""
    x = np.asarray(x, dtype=float).ravel()
    out = np.zeros((x.size + 1, x.size + 1))
    out[0, 0] = -lead
    out[0, 1:] = x
    out[1:, 0] = x
    out[1:, 1:] = -np.asarray(gamma)
    return out


def input_block(gamma, s, u_max: float) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    m = s.shape[0]
    return np.block([[-u_max ** 2 * np.eye(m), s], [s.T, -np.asarray(gamma)]])


def small_cost_matrix(gamma, s, m: int, p: int) -> np.ndarray:
    """The quadratic (non-Schur) form ``diag([-G, 0; 0, -I], [G, S^T; S, S G^-1 S^T])``."""
    gamma = np.asarray(gamma, dtype=float)
    s = np.asarray(s, dtype=float)
    n = gamma.shape[0]
    lay = BlockLayout([n, m + p, n, m])
    out = lay.zeros()
    lay.place(out, 0, 0, -gamma)
    lay.place(out, 1, 1, -1.0)
    lay.place(out, 2, 2, gamma)
    lay.place(out, 3, 2, s)
    lay.place(out, 3, 3, sym(s @ np.linalg.solve(gamma, s.T)))
    return out


# -- assembly --------------------------------------------------------------

def _lmi_grams(cs: ConsistencySet) -> tuple[np.ndarray, np.ndarray]:
    n_main = cs.N_lmi if cs.N_lmi is not None else cs.N
    n_out = cs.N_y_lmi if cs.N_y_lmi is not None else cs.N_y
    return n_main, n_out


def _affine(fn, nvars: int) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients of an affine symmetric-matrix map in svec coordinates."""
    base = svec(fn(np.zeros(nvars)))
    a = np.empty((base.size, nvars))
    e = np.zeros(nvars)
    for j in range(nvars):
        e[j] = 1.0
        a[:, j] = svec(fn(e)) - base
        e[j] = 0.0
    return a, base


def _scalar_row(nvars: int, coeffs: dict, offset: float) -> tuple[np.ndarray, np.ndarray]:
    row = np.zeros((1, nvars))
    for i, c in coeffs.items():
        row[0, i] = c
    return row, np.array([offset])


def _coords(cs: ConsistencySet, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    basis = cs.meta.get("basis")
    if x.size != cs.n and basis is not None:
        basis = np.asarray(basis)
        if basis.shape[0] == x.size:
            x = basis.T @ x
    if x.size != cs.n:
        raise ValueError(f"state has dimension {x.size}, consistency set expects {cs.n}")
    return x


@dataclass
class SynthesisProblem:
    variant: str
    program: sdp.ConicProgram
    layout: VariableLayout
    x_now: np.ndarray
    set: ConsistencySet

    def conditioned(self) -> tuple[sdp.ConicProgram, np.ndarray]:
        """The same program rescaled by the size of the current state.

        The optimal cost scales with ``|x|^2``, so late in a regulation run every
        number in the program shrinks toward the solver's absolute tolerances.
        Dividing the state-dependent quantities by ``s = |x|^2`` (a change of
        variables plus positive congruences of each cone) gives an equivalent
        program whose optimum is O(1). Returns the program and the variable
        scale ``v`` such that ``x = v * x'``.
        """
        s = float(self.x_now @ self.x_now)
        # below EPS_ETA the cost floor dominates, so there is nothing left to resolve
        s = min(max(s, EPS_ETA), 1e12) if s > 0 and np.isfinite(s) else 1.0
        lay, n = self.layout, self.layout.n
        r = 1.0 / np.sqrt(s)
        var_scale = np.ones(lay.size)
        scales = []
        if self.variant == UNCONSTRAINED:
            # only eta scales: x' Gamma^-1 x' <= eta / s with x' = x / sqrt(s)
            var_scale[lay.scalars["eta"]] = s
            for c in self.program.cones:
                if c.name == "gamma-x":
                    scales.append(np.concatenate([[r], np.ones(n)]))
                elif c.name.startswith("eta"):
                    scales.append(1.0 / s)
                else:
                    scales.append(1.0)
        else:
            # every variable scales with s; gamma-x becomes the same LMI at x / sqrt(s)
            var_scale[:] = s
            for c in self.program.cones:
                if c.name == "gamma-x":
                    scales.append(np.concatenate([[1.0], np.full(n, r)]))
                elif c.kind == "psd":
                    scales.append(r)
                else:
                    scales.append(1.0 / s)
        return self.program.rescaled(var_scale, scales, 1.0 / s), var_scale


def assemble_unconstrained(cs: ConsistencySet, x_now, floors: Floors = Floors(),
                           caps: MultiplierCaps = DEFAULT_CAPS) -> SynthesisProblem:
    x = _coords(cs, x_now)
    n, m, p = cs.n, cs.m, cs.p
    lay = VariableLayout(n, m, constrained=False)
    n_main, _ = _lmi_grams(cs)
    nn = data_block(n_main, n)
    head = n + m + p
    ia, ib, ie = lay.scalars["alpha"], lay.scalars["beta"], lay.scalars["eta"]

    def gammax(v):
        d = lay.unpack(v)
        return -state_block(x, d["Gamma"], d["eta"])

    def decrease(v):
        d = lay.unpack(v)
        out = cost_block(d["Gamma"], d["S"], m, p) - d["alpha"] * nn
        out[:head, :head] += d["beta"] * np.eye(head)
        return -out

    def gamma_floor(v):
        return lay.unpack(v)["Gamma"] - floors.gamma * np.eye(n)

    blocks = [("gamma-x", gammax), ("decrease", decrease), ("gamma-floor", gamma_floor)]
    scalars = [("alpha>=0", {ia: 1.0}, 0.0), ("beta>=eps", {ib: 1.0}, -floors.beta),
               ("eta>=eps", {ie: 1.0}, -floors.eta)]
    if caps.alpha is not None:
        scalars.append(("alpha<=cap", {ia: -1.0}, caps.alpha))
    return _finish(UNCONSTRAINED, cs, lay, x, blocks, scalars)


def assemble_constrained(cs: ConsistencySet, x_now, c: NormConstraints | None,
                         floors: Floors = Floors(),
                         caps: MultiplierCaps = DEFAULT_CAPS,
                         variant: str = CONSTRAINED) -> SynthesisProblem:
    """Scaled program with optional input/output norm LMIs.

    With ``c=None`` this is the scaled equivalent of the unconstrained program.
    """
    x = _coords(cs, x_now)
    n, m, p = cs.n, cs.m, cs.p
    lay = VariableLayout(n, m, constrained=True)
    n_main, n_out = _lmi_grams(cs)
    nn = data_block(n_main, n)
    ny = data_block(n_out, n)
    head = n + m + p
    sc = lay.scalars

    def gammax(v):
        d = lay.unpack(v)
        return -state_block(x, d["Gamma"], 1.0)

    def decrease(v):
        d = lay.unpack(v)
        out = cost_block(d["Gamma"], d["S"], m, p, eta=d["eta"]) - d["alpha"] * nn
        out[:head, :head] += d["beta"] * np.eye(head)
        return -out

    # floors and the multiplier cap are stated in unscaled units (beta = beta_bar / eta,
    # Gamma = Gamma_bar / eta, alpha = alpha_bar / eta), so this program describes exactly the
    # same feasible set as the unscaled one and stays homogeneous in eta when x_now = 0
    def gamma_floor(v):
        d = lay.unpack(v)
        return d["Gamma"] - floors.gamma * d["eta"] * np.eye(n)

    blocks = [("gamma-x", gammax), ("decrease", decrease)]
    scalars = [("alpha>=0", {sc["alpha"]: 1.0}, 0.0),
               ("beta>=eps*eta", {sc["beta"]: 1.0, sc["eta"]: -floors.beta}, 0.0),
               ("eta>=eps", {sc["eta"]: 1.0}, -floors.eta)]
    if c is not None:
        if not (c.u_max > 0 and c.y_max > 0):
            raise ValueError("norm bounds must be positive")

        def inp(v):
            d = lay.unpack(v)
            return -input_block(d["Gamma"], d["S"], c.u_max)

        def outp(v):
            d = lay.unpack(v)
            out = output_block(d["Gamma"], d["S"], p, c.y_max) - d["tau"] * ny
            out[:p, :p] += d["kappa"] * np.eye(p)
            return -out

        blocks += [("input", inp), ("output", outp)]
        scalars += [("tau>=0", {sc["tau"]: 1.0}, 0.0),
                    ("kappa>=eps", {sc["kappa"]: 1.0}, -floors.kappa)]
        if caps.tau is not None:
            scalars.append(("tau<=cap", {sc["tau"]: -1.0}, caps.tau))
    else:
        # tau and kappa are unused; pin them to keep the program bounded
        scalars += [("tau=0", {sc["tau"]: 1.0}, 0.0), ("tau=0'", {sc["tau"]: -1.0}, 0.0),
                    ("kappa=0", {sc["kappa"]: 1.0}, 0.0), ("kappa=0'", {sc["kappa"]: -1.0}, 0.0)]
    blocks.append(("gamma-floor", gamma_floor))
    if caps.alpha is not None:
        scalars.append(("alpha<=cap*eta", {sc["alpha"]: -1.0, sc["eta"]: caps.alpha}, 0.0))
    return _finish(variant, cs, lay, x, blocks, scalars)


def assemble_constrained_io(cs: ConsistencySet, xhat_now, c: NormConstraints,
                            floors: Floors = Floors(),
                            caps: MultiplierCaps = DEFAULT_CAPS) -> SynthesisProblem:
    if cs.mode != OUTPUT:
        raise ValueError("the input-output program needs an extended-state consistency set")
    return assemble_constrained(cs, xhat_now, c, floors, caps, variant=CONSTRAINED_IO)


def _finish(variant, cs, lay, x, blocks, scalars) -> SynthesisProblem:
    cones, a_parts, b_parts = [], [], []
    for name, fn in blocks:
        a, b = _affine(fn, lay.size)
        dim = int(round((np.sqrt(8 * b.size + 1) - 1) / 2))
        cones.append(sdp.Cone("psd", dim, name))
        a_parts.append(a)
        b_parts.append(b)
    for name, coeffs, offset in scalars:
        a, b = _scalar_row(lay.size, coeffs, offset)
        cones.append(sdp.Cone("nonneg", 1, name))
        a_parts.append(a)
        b_parts.append(b)
    obj = np.zeros(lay.size)
    obj[lay.scalars["eta"]] = 1.0
    prog = sdp.ConicProgram(obj, cones, np.vstack(a_parts), np.concatenate(b_parts), lay.names())
    prog.validate()
    return SynthesisProblem(variant, prog, lay, x, cs)


def assemble(variant: str, cs: ConsistencySet, x_now, c: NormConstraints | None = None,
             floors: Floors = Floors(), caps: MultiplierCaps = DEFAULT_CAPS) -> SynthesisProblem:
    if variant == UNCONSTRAINED:
        return assemble_unconstrained(cs, x_now, floors, caps)
    if variant == CONSTRAINED:
        return assemble_constrained(cs, x_now, c, floors, caps)
    if variant == CONSTRAINED_IO:
        return assemble_constrained_io(cs, x_now, c, floors, caps)
    raise ValueError(f"unknown variant {variant!r}")


# -- extraction ------------------------------------------------------------

@dataclass
class SynthesisResult:
    variant: str
    status: str
    variables: dict = field(default_factory=dict)
    F: np.ndarray | None = None
    P: np.ndarray | None = None
    eta: float = float("nan")
    bound: float = float("nan")
    basis: np.ndarray | None = None
    x_now: np.ndarray | None = None
    outcome: sdp.SolveOutcome | None = None
    verification: sdp.VerificationReport | None = None

    @property
    def solved(self) -> bool:
        return self.status == SOLVED

    @property
    def gain(self) -> np.ndarray:
        """Gain acting on the uncompressed (measured) state."""
        return self.F @ self.basis.T if self.basis is not None else self.F

    def summary(self) -> dict:
        return {"variant": self.variant, "status": self.status, "eta": self.eta,
                "bound": self.bound,
                "solver_status": self.outcome.status if self.outcome else None,
                "retried": bool(self.outcome.retried) if self.outcome else False}


def extract_result(problem: SynthesisProblem, outcome: sdp.SolveOutcome,
                   verify: bool = True) -> SynthesisResult:
    basis = problem.set.meta.get("basis")
    basis = None if basis is None else np.asarray(basis)
    if outcome.status == sdp.INFEASIBLE:
        return SynthesisResult(problem.variant, INFEASIBLE, basis=basis, outcome=outcome)
    if not outcome.optimal:
        return SynthesisResult(problem.variant, NUMERICAL_FAILURE, basis=basis, outcome=outcome)
    v = problem.layout.unpack(outcome.primal)
    gamma, s, eta = v["Gamma"], v["S"], v["eta"]
    w = np.linalg.eigvalsh(gamma)
    report = None
    if verify:
        # checked on the conditioned program, where the tolerances are meaningful
        prog, scale = problem.conditioned()
        report = sdp.verify_solution(prog, outcome.primal / scale)
    if report is not None and not report.passed(rtol=VERIFY_RTOL, atol=VERIFY_ATOL):
        # the solver claimed optimality but the point violates a cone
        return SynthesisResult(problem.variant, NUMERICAL_FAILURE, v, basis=basis,
                               outcome=outcome, verification=report)
    if w[0] < 1e-9 * max(np.abs(w).max(), 1e-300):
        return SynthesisResult(problem.variant, NUMERICAL_FAILURE, v, basis=basis,
                               outcome=outcome, verification=report)
    f = np.linalg.solve(gamma, s.T).T
    ginv = sym(np.linalg.inv(gamma))
    p_mat = ginv if problem.variant == UNCONSTRAINED else eta * ginv
    x = problem.x_now
    return SynthesisResult(problem.variant, SOLVED, v, f, p_mat, eta, float(x @ p_mat @ x),
                           basis, x, outcome, report)


def synthesize(variant: str, cs: ConsistencySet, x_now, c: NormConstraints | None = None,
               opts: sdp.SolverOptions | None = None, floors: Floors = Floors(),
               caps: MultiplierCaps = DEFAULT_CAPS) -> SynthesisResult:
    problem = assemble(variant, cs, x_now, c, floors, caps)
    prog, scale = problem.conditioned()
    out = sdp.solve(prog, opts)
    primal = out.primal * scale
    value = float(problem.program.objective @ primal) if np.all(np.isfinite(primal)) else np.nan
    return extract_result(problem, replace(out, primal=primal, objective_value=value))


# -- certification ---------------------------------------------------------

@dataclass
class BoundCertificate:
    bound: float
    costs: list[float]
    radii: list[float]
    identified: bool
    rtol: float = 1e-6

    @property
    def max_cost(self) -> float:
        return max(self.costs, default=0.0)

    @property
    def max_radius(self) -> float:
        return max(self.radii, default=0.0)

    @property
    def margin(self) -> float:
        return self.bound * (1 + self.rtol) - self.max_cost

    @property
    def violations(self) -> list[int]:
        lim = self.bound * (1 + self.rtol)
        return [i for i, (j, r) in enumerate(zip(self.costs, self.radii)) if j > lim or r >= 1]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"bound": self.bound, "max_cost": self.max_cost, "max_radius": self.max_radius,
                "margin": self.margin, "samples": len(self.costs), "identified": self.identified,
                "violations": self.violations, "passed": self.passed}


def closed_loop_cost(sys_sample, F, x0, Q, R, horizon: int) -> float:
    """Accumulated stage cost of ``x+ = (A + B F) x`` over ``horizon`` steps."""
    acl = sys_sample.A + sys_sample.B @ F
    ccl = sys_sample.C + sys_sample.D @ F
    x = np.asarray(x0, dtype=float).copy()
    total = 0.0
    for _ in range(horizon):
        y, u = ccl @ x, F @ x
        total += float(y @ Q @ y + u @ R @ u)
        x = acl @ x
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > 1e150:
            return float("inf")
    return total


def certify_upper_bound(result: SynthesisResult, cs: ConsistencySet, d: DataMatrices,
                        horizon: int = 500, samples: int = 100, seed: int = 0,
                        x_now=None) -> BoundCertificate:
    """Check the cost bound and closed-loop stability over members of the data set."""
    if not result.solved:
        raise ValueError("cannot certify an unsolved synthesis result")
    x = _coords(cs, x_now) if x_now is not None else result.x_now
    draw = sample_sigma(cs, d, samples, seed=seed)
    costs, radii = [], []
    for member in draw.systems[1:]:
        radii.append(spectral_radius(member.A + member.B @ result.F))
        costs.append(closed_loop_cost(member, result.F, x, cs.Q, cs.R, horizon))
    bound = float(x @ result.P @ x)
    return BoundCertificate(bound, costs, radii, draw.identified)
