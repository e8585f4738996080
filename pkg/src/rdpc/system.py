"""Discrete-time LTI plants, trajectory collection and the batch-reactor preset.

This is the only module that ever sees true system matrices; the controller
works from recorded trajectories.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BLOWUP_NORM = 1e6


class SimulationBlowUp(RuntimeError):
    def __init__(self, k: int, norm: float):
        super().__init__(f"state norm {norm:.3g} exceeded {BLOWUP_NORM:g} at k={k}")
        self.k = k
        self.norm = norm


@dataclass(frozen=True)
class LtiSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        for key in ("A", "B", "C", "D"):
            object.__setattr__(self, key, np.atleast_2d(np.asarray(getattr(self, key), dtype=float)))
        n, m, p = self.A.shape[0], self.B.shape[1], self.C.shape[0]
        if (self.A.shape != (n, n) or self.B.shape != (n, m)
                or self.C.shape != (p, n) or self.D.shape != (p, m)):
            raise ValueError(
                f"system matrices do not conform: A{self.A.shape} B{self.B.shape} "
                f"C{self.C.shape} D{self.D.shape}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def to_dict(self) -> dict:
        return {"name": self.name, **{k: getattr(self, k).tolist() for k in "ABCD"}}

    @classmethod
    def from_dict(cls, d: dict) -> "LtiSystem":
        return cls(*(np.asarray(d[k], dtype=float) for k in "ABCD"), name=d.get("name", "custom"))


@dataclass(frozen=True)
class NormConstraints:
    u_max: float
    y_max: float

    def __post_init__(self):
        if not (self.u_max > 0 and self.y_max > 0):
            raise ValueError("u_max and y_max must be positive")


def _num(v) -> str:
    """Shortest round-tripping text form of a float."""
    return repr(float(v))


@dataclass
class Trajectory:
    """Time-major record: ``inputs`` is T x m, ``outputs`` T x p, ``states`` (T+1) x n."""

    inputs: np.ndarray
    outputs: np.ndarray
    states: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.outputs = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ValueError("inputs and outputs must have the same length")
        if self.states is not None:
            self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
            if self.states.shape[0] != self.length + 1:
                raise ValueError("states must have one more sample than inputs")

    @property
    def length(self) -> int:
        return self.inputs.shape[0]

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    @property
    def p(self) -> int:
        return self.outputs.shape[1]

    def without_states(self) -> "Trajectory":
        return Trajectory(self.inputs.copy(), self.outputs.copy(), None, dict(self.meta))

    # -- serialization -------------------------------------------------
    def header(self) -> list[str]:
        cols = ["k"] + [f"u{i + 1}" for i in range(self.m)] + [f"y{i + 1}" for i in range(self.p)]
        if self.states is not None:
            cols += [f"x{i + 1}" for i in range(self.states.shape[1])]
        return cols

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for k in range(self.length):
                row = [k, *map(_num, self.inputs[k]), *map(_num, self.outputs[k])]
                if self.states is not None:
                    row += list(map(_num, self.states[k]))
                w.writerow(row)
            if self.states is not None:
                # terminal state x(T) has no input or output
                w.writerow([self.length] + [""] * (self.m + self.p) + list(map(_num, self.states[-1])))

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty trajectory file")
        head = rows[0]
        ucols = [i for i, h in enumerate(head) if h.startswith("u")]
        ycols = [i for i, h in enumerate(head) if h.startswith("y")]
        xcols = [i for i, h in enumerate(head) if h.startswith("x")]
        body = [r for r in rows[1:] if r]
        full = [r for r in body if r[ucols[0]] != ""] if ucols else body
        inputs = np.array([[float(r[i]) for i in ucols] for r in full]).reshape(len(full), len(ucols))
        outputs = np.array([[float(r[i]) for i in ycols] for r in full]).reshape(len(full), len(ycols))
        states = None
        if xcols:
            states = np.array([[float(r[i]) for i in xcols] for r in body])
        return cls(inputs, outputs, states)

    def to_json(self) -> str:
        d = {"meta": self.meta, "T": self.length,
             "inputs": self.inputs.tolist(), "outputs": self.outputs.tolist(),
             "states": None if self.states is None else self.states.tolist()}
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        d = json.loads(text)
        return cls(np.asarray(d["inputs"]).reshape(d["T"], -1),
                   np.asarray(d["outputs"]).reshape(d["T"], -1),
                   None if d.get("states") is None else np.asarray(d["states"]),
                   d.get("meta", {}))

    def save(self, stem: Path | str) -> tuple[Path, Path]:
        stem = Path(stem)
        csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
        self.to_csv(csv_path)
        json_path.write_text(self.to_json())
        return csv_path, json_path


def step(sys: LtiSystem, x, u) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    if x.size != sys.n or u.size != sys.m:
        raise ValueError(f"state/input sizes {x.size}/{u.size} do not match n={sys.n}, m={sys.m}")
    return sys.A @ x + sys.B @ u, sys.C @ x + sys.D @ u


def uniform_excitation(length: int, m: int, seed: int, low: float = -0.1, high: float = 0.1) -> np.ndarray:
    """i.i.d. uniform inputs, one row per time step."""
    rng = np.random.default_rng(seed)
    return rng.uniform(low, high, size=(length, m))


def collect(sys: LtiSystem, x0, excitation, record_states: bool = True, meta: dict | None = None) -> Trajectory:
    excitation = np.atleast_2d(np.asarray(excitation, dtype=float))
    if excitation.shape[1] != sys.m and excitation.shape[0] == sys.m:
        excitation = excitation.T
    T = excitation.shape[0]
    if T < 1:
        raise ValueError("excitation must have at least one sample")
    x = np.asarray(x0, dtype=float).ravel()
    states = [x]
    outputs = []
    for k in range(T):
        x, y = step(sys, x, excitation[k])
        outputs.append(y)
        states.append(x)
        nrm = float(np.linalg.norm(x))
        if not np.isfinite(nrm) or nrm > BLOWUP_NORM:
            raise SimulationBlowUp(k + 1, nrm)
    meta = {"system": sys.name, "T": T, **(meta or {})}
    return Trajectory(excitation.copy(), np.array(outputs),
                      np.array(states) if record_states else None, meta)


def replay_residual(sys: LtiSystem, traj: Trajectory) -> float:
    """Largest violation of the state and output equations along ``traj``."""
    if traj.states is None:
        raise ValueError("replay needs recorded states")
    x, x1 = traj.states[:-1], traj.states[1:]
    rx = x1 - x @ sys.A.T - traj.inputs @ sys.B.T
    ry = traj.outputs - x @ sys.C.T - traj.inputs @ sys.D.T
    return float(max(np.abs(rx).max(initial=0.0), np.abs(ry).max(initial=0.0)))


def batch_reactor() -> LtiSystem:
    """Unstable batch reactor discretized at 0.1 s (4 states, 2 inputs, 2 outputs)."""
    A = [[1.178, 0.002, 0.512, -0.403],
         [-0.052, 0.662, -0.011, 0.061],
         [0.076, 0.335, 0.561, 0.382],
         [-0.001, 0.335, 0.089, 0.849]]
    B = [[0.005, -0.088],
         [0.467, 0.001],
         [0.213, -0.235],
         [0.213, -0.016]]
    C = [[1, 0, 1, -1],
         [0, 1, 0, 0]]
    return LtiSystem(np.array(A), np.array(B), np.array(C, dtype=float), np.zeros((2, 2)),
                     name="batch-reactor")


def check_constraints(traj: Trajectory, c: NormConstraints, atol: float = 0.0) -> int | None:
    """Earliest k with ``||u(k)|| > u_max`` or ``||y(k)|| > y_max``, else None."""
    un = np.linalg.norm(traj.inputs, axis=1)
    yn = np.linalg.norm(traj.outputs, axis=1)
    bad = np.flatnonzero((un > c.u_max + atol) | (yn > c.y_max + atol))
    return int(bad[0]) if bad.size else None
