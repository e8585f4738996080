"""Data matrices and the sets of systems consistent with recorded data.

Two modes are supported. In *state* mode the recorded state is used directly.
In *output* mode the state is replaced by a window of the last ``n`` inputs
and outputs (the extended state), which gives a realization with zero
feedthrough driven purely by input-output data.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import (finsler_preconditions, null_space_basis, numerical_rank, pseudo_inverse,
                     psd_sqrt, range_basis, sym)
from .system import LtiSystem, Trajectory

STATE = "state"
OUTPUT = "output"


def extend_state(u_window, y_window) -> np.ndarray:
    """Stack ``u(k-n)..u(k-1)`` followed by ``y(k-n)..y(k-1)``.

    Both windows are time-major (``n`` rows) and must have the same length.
    """
    u_window = np.atleast_2d(np.asarray(u_window, dtype=float))
    y_window = np.atleast_2d(np.asarray(y_window, dtype=float))
    if u_window.shape[0] != y_window.shape[0]:
        raise ValueError(
            f"input window has {u_window.shape[0]} samples, output window {y_window.shape[0]}")
    return np.concatenate([u_window.ravel(), y_window.ravel()])


@dataclass
class DataMatrices:
    """Column-wise data matrices ``U, Y, X, X_plus`` (one column per sample).

    ``basis`` is set when the state coordinates were compressed onto the span
    of the recorded states: the stored state is then ``basis.T @ x``.
    """

    U: np.ndarray
    Y: np.ndarray
    X: np.ndarray
    X_plus: np.ndarray
    mode: str = STATE
    lag: int = 0
    basis: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[0]

    @property
    def samples(self) -> int:
        return self.U.shape[1]

    @property
    def full_state_dim(self) -> int:
        return self.basis.shape[0] if self.basis is not None else self.n

    def to_coordinates(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        return self.basis.T @ x if self.basis is not None else x

    def projection_residual(self, x) -> float:
        """Distance of ``x`` from the span of the compressed coordinates."""
        if self.basis is None:
            return 0.0
        x = np.asarray(x, dtype=float).ravel()
        return float(np.linalg.norm(x - self.basis @ (self.basis.T @ x)))

    def lift_gain(self, f: np.ndarray) -> np.ndarray:
        """Express a gain computed in compressed coordinates on the full state."""
        return f @ self.basis.T if self.basis is not None else f

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else {"shape": list(a.shape), "data": a.ravel().tolist()}
        return {"mode": self.mode, "lag": self.lag, "U": arr(self.U), "Y": arr(self.Y),
                "X": arr(self.X), "X_plus": arr(self.X_plus), "basis": arr(self.basis)}

    @classmethod
    def from_dict(cls, d: dict) -> "DataMatrices":
        def arr(a):
            return None if a is None else np.asarray(a["data"], dtype=float).reshape(a["shape"])
        return cls(arr(d["U"]), arr(d["Y"]), arr(d["X"]), arr(d["X_plus"]),
                   d.get("mode", STATE), int(d.get("lag", 0)), arr(d.get("basis")))


def build_data_matrices(traj: Trajectory, mode: str = STATE, n: int | None = None) -> DataMatrices:
    """Arrange a trajectory into data matrices.

    ``mode="state"`` needs recorded states. ``mode="output"`` needs the plant
    order ``n`` and at least ``n + 1`` samples; columns run over ``k = n..T-1``.
    """
    T = traj.length
    if mode == STATE:
        if traj.states is None:
            raise ValueError("state-mode data matrices need recorded states")
        x = traj.states.T
        return DataMatrices(traj.inputs.T.copy(), traj.outputs.T.copy(),
                            x[:, :T].copy(), x[:, 1:T + 1].copy(), STATE, 0)
    if mode != OUTPUT:
        raise ValueError(f"unknown mode {mode!r}")
    if n is None or n < 1:
        raise ValueError("output mode needs the plant order n >= 1")
    if T <= n:
        raise ValueError(f"trajectory of length {T} is too short for lag {n}")
    u, y = traj.inputs, traj.outputs
    xhat = np.array([extend_state(u[k - n:k], y[k - n:k]) for k in range(n, T + 1)]).T
    return DataMatrices(u[n:T].T.copy(), y[n:T].T.copy(), xhat[:, :-1].copy(), xhat[:, 1:].copy(),
                        OUTPUT, n)


def compress_state(d: DataMatrices, rtol: float = 1e-9) -> DataMatrices:
    """Restrict the state coordinates to the span of the recorded states.

    The extended state of an order-``n`` plant only ever moves inside a
    subspace of dimension ``n + n*m``, so its data matrix cannot have full
    row rank. Expressing the data in an orthonormal basis of the span of
    ``[X, X_plus]`` removes the directions no trajectory can reach.
    """
    basis = range_basis(np.hstack([d.X, d.X_plus]), rtol=rtol)
    if d.basis is not None:
        basis_full = d.basis @ basis
    else:
        basis_full = basis
    return replace(d, X=basis.T @ d.X, X_plus=basis.T @ d.X_plus, basis=basis_full)


@dataclass
class ConsistencySet:
    """Quadratic description of all systems that reproduce the data.

    ``H`` stacks ``X_plus, Q^1/2 Y, R^1/2 U, -X, -U``; ``N = H H^T``. ``H_y``
    stacks ``Y, -X, -U`` and ``N_y = H_y H_y^T``. The ``*_lmi`` Gram matrices
    describe the same sets after an invertible recombination of data columns
    that whitens ``[X; U]``; they are what the synthesis LMIs use.
    """

    H: np.ndarray
    N: np.ndarray
    H_y: np.ndarray
    N_y: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Q_half: np.ndarray
    R_half: np.ndarray
    n: int
    m: int
    p: int
    mode: str = STATE
    N_lmi: np.ndarray | None = None
    N_y_lmi: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def q_split(self) -> int:
        return self.n + self.m + self.p

    @property
    def s_split(self) -> int:
        return self.n + self.m

    def finsler_reports(self, tol: float = 1e-8):
        return {
            "N": finsler_preconditions(self.N, self.q_split, self.s_split, tol),
            "N_y": finsler_preconditions(self.N_y, self.p, self.s_split, tol),
        }

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else {"shape": list(a.shape), "data": np.asarray(a).ravel().tolist()}
        return {"mode": self.mode, "n": self.n, "m": self.m, "p": self.p,
                "H": arr(self.H), "N": arr(self.N), "H_y": arr(self.H_y), "N_y": arr(self.N_y),
                "Q": arr(self.Q), "R": arr(self.R), "N_lmi": arr(self.N_lmi),
                "N_y_lmi": arr(self.N_y_lmi),
                "meta": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                         for k, v in self.meta.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "ConsistencySet":
        def arr(a):
            return None if a is None else np.asarray(a["data"], dtype=float).reshape(a["shape"])
        Q, R = arr(d["Q"]), arr(d["R"])
        return cls(arr(d["H"]), arr(d["N"]), arr(d["H_y"]), arr(d["N_y"]), Q, R,
                   psd_sqrt(Q), psd_sqrt(R), int(d["n"]), int(d["m"]), int(d["p"]),
                   d.get("mode", STATE), arr(d.get("N_lmi")), arr(d.get("N_y_lmi")),
                   d.get("meta", {}))


def dump_json(d: DataMatrices, s: ConsistencySet) -> str:
    return json.dumps({"data": d.to_dict(), "set": s.to_dict()})


def _check_weight(w, name: str, dim: int) -> np.ndarray:
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if w.shape != (dim, dim):
        raise ValueError(f"{name} must be {dim}x{dim}, got {w.shape}")
    if not np.allclose(w, w.T, atol=1e-12 * max(1.0, np.abs(w).max())):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(sym(w))[0] <= 0:
        raise ValueError(f"{name} must be positive definite")
    return sym(w)


def _whitening(regressor: np.ndarray) -> np.ndarray | None:
    """Column recombination ``V`` with ``regressor @ V`` orthonormal columns."""
    if regressor.shape[1] == 0 or not np.any(regressor):
        return None
    _, s, vt = np.linalg.svd(regressor, full_matrices=False)
    r = numerical_rank(regressor)
    return vt[:r].T / s[:r]


def build_consistency_set(d: DataMatrices, Q, R) -> ConsistencySet:
    Q = _check_weight(Q, "Q", d.p)
    R = _check_weight(R, "R", d.m)
    qh, rh = psd_sqrt(Q), psd_sqrt(R)
    H = np.vstack([d.X_plus, qh @ d.Y, rh @ d.U, -d.X, -d.U])
    H_y = np.vstack([d.Y, -d.X, -d.U])
    regressor = np.vstack([d.X, d.U])
    v = _whitening(regressor)
    if v is None:
        N_lmi, N_y_lmi = H @ H.T, H_y @ H_y.T
    else:
        hw, hyw = H @ v, H_y @ v
        N_lmi, N_y_lmi = hw @ hw.T, hyw @ hyw.T
    meta = {} if d.basis is None else {"basis": d.basis}
    return ConsistencySet(H, H @ H.T, H_y, H_y @ H_y.T, Q, R, qh, rh, d.n, d.m, d.p, d.mode,
                          sym(N_lmi), sym(N_y_lmi), meta)


def z_matrix(s: ConsistencySet, sys: LtiSystem) -> np.ndarray:
    """Unknown block ``Z`` with the weight roots folded in (bottom row fixed)."""
    if (sys.n, sys.m, sys.p) != (s.n, s.m, s.p):
        raise ValueError(f"candidate dims {(sys.n, sys.m, sys.p)} != set dims {(s.n, s.m, s.p)}")
    return np.block([[sys.A, sys.B],
                     [s.Q_half @ sys.C, s.Q_half @ sys.D],
                     [np.zeros((s.m, s.n)), s.R_half]])


def membership_residual(s: ConsistencySet, candidate: LtiSystem) -> float:
    """Normalized residual of the quadratic matrix equation; zero on the set."""
    z = z_matrix(s, candidate)
    iz = np.hstack([np.eye(s.q_split), z])
    res = iz @ s.N @ iz.T
    return float(np.linalg.norm(res) / max(1.0, np.linalg.norm(s.N)))


@dataclass
class SigmaSamples:
    systems: list[LtiSystem]
    Z0: np.ndarray
    kernel: np.ndarray
    identified: bool


def sigma_parameterization(s: ConsistencySet, d: DataMatrices) -> tuple[np.ndarray, np.ndarray]:
    """Particular solution ``Z0`` and left-annihilator basis of ``[X; U]``."""
    regressor = np.vstack([d.X, d.U])
    top = np.vstack([d.X_plus, s.Q_half @ d.Y, s.R_half @ d.U])
    z0 = top @ pseudo_inverse(regressor)
    kernel = null_space_basis(regressor.T) if regressor.size else np.eye(regressor.shape[0])
    return z0, kernel


def _unpack(s: ConsistencySet, z: np.ndarray, name: str) -> LtiSystem:
    n, m, p = s.n, s.m, s.p
    qinv = np.linalg.inv(s.Q_half)
    return LtiSystem(z[:n, :n], z[:n, n:], qinv @ z[n:n + p, :n], qinv @ z[n:n + p, n:], name=name)


def sample_sigma(s: ConsistencySet, d: DataMatrices, count: int, seed: int = 0,
                 scale: float | None = None) -> SigmaSamples:
    """Draw members of the consistency set.

    The first returned system is the minimum-norm member; the remaining
    ``count`` systems add random perturbations along the unidentified
    directions. When the data identify the system, every sample equals the
    minimum-norm member and ``identified`` is set.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    z0, kernel = sigma_parameterization(s, d)
    rows = s.n + s.p
    base = _unpack(s, z0, "sigma-0")
    if kernel.shape[1] == 0:
        return SigmaSamples([base] + [_unpack(s, z0, f"sigma-{i + 1}") for i in range(count)],
                            z0, kernel, True)
    if scale is None:
        scale = 0.5 * np.linalg.norm(z0) / np.sqrt(kernel.shape[1])
    rng = np.random.default_rng(seed)
    systems = [base]
    for i in range(count):
        g = np.zeros_like(z0)
        g[:rows] = scale * rng.standard_normal((rows, kernel.shape[1])) @ kernel.T
        systems.append(_unpack(s, z0 + g, f"sigma-{i + 1}"))
    return SigmaSamples(systems, z0, kernel, False)


def sample_output_maps(d: DataMatrices, count: int, seed: int = 0,
                       scale: float | None = None) -> tuple[list[np.ndarray], bool]:
    """Draw output maps ``C`` with ``Y = C X`` (zero-feedthrough realizations).

    Returns the minimum-norm solution followed by ``count`` perturbed ones, and
    whether the data pin ``C`` down uniquely.
    """
    c0 = d.Y @ pseudo_inverse(d.X)
    kernel = null_space_basis(d.X.T) if d.X.size else np.eye(d.n)
    if kernel.shape[1] == 0:
        return [c0] * (count + 1), True
    if scale is None:
        scale = 0.5 * np.linalg.norm(c0) / np.sqrt(kernel.shape[1])
    rng = np.random.default_rng(seed)
    out = [c0]
    for _ in range(count):
        out.append(c0 + scale * rng.standard_normal((d.p, kernel.shape[1])) @ kernel.T)
    return out, False
