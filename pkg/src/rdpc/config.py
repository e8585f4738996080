"""Experiment configuration files (YAML)."""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import sdp
from .controller import REUSE, ControllerConfig
from .synthesis import (CONSTRAINED, CONSTRAINED_IO, DEFAULT_CAPS, UNCONSTRAINED, VARIANTS,
                        MultiplierCaps)
from .system import LtiSystem, NormConstraints, batch_reactor

PRESETS = {"batch-reactor": batch_reactor}


class ConfigError(ValueError):
    pass


@dataclass
class Excitation:
    length: int
    seed: int | None
    low: float = -0.1
    high: float = 0.1
    x0: np.ndarray | None = None


@dataclass
class ExperimentConfig:
    system: LtiSystem
    excitation: Excitation | None
    controller: ControllerConfig
    output_dir: Path = Path("out")
    formats: tuple[str, ...] = ("csv", "json", "plot-data", "png")
    trajectory: Path | None = None
    verify_samples: int = 100
    verify_seed: int = 0
    source: Path | None = None


def _matrix(value, name: str, dim: int | None = None) -> np.ndarray:
    """Accept a nested list, or a scalar meaning ``scalar * I`` when ``dim`` is known."""
    try:
        if np.ndim(value) == 0:
            if dim is None:
                raise ConfigError(f"{name}: scalar given but the dimension is unknown")
            return float(value) * np.eye(dim)
        return np.atleast_2d(np.asarray(value, dtype=float))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def _system(spec) -> LtiSystem:
    if isinstance(spec, str):
        spec = {"preset": spec}
    if not isinstance(spec, dict):
        raise ConfigError("system must be a preset name or a mapping")
    if "preset" in spec:
        try:
            return PRESETS[spec["preset"]]()
        except KeyError:
            raise ConfigError(f"unknown system preset {spec['preset']!r}") from None
    try:
        a = _matrix(spec["A"], "A")
        b = _matrix(spec["B"], "B")
        c = _matrix(spec["C"], "C")
        d = _matrix(spec.get("D", np.zeros((c.shape[0], b.shape[1]))), "D")
        return LtiSystem(a, b, c, d, name=spec.get("name", "custom"))
    except KeyError as exc:
        raise ConfigError(f"system is missing matrix {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"system: {exc}") from exc


def _excitation(spec, n: int) -> Excitation | None:
    if spec is None:
        return None
    try:
        length = int(spec["length"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError("excitation.length must be an integer") from None
    if length < 1:
        raise ConfigError(f"excitation.length must be at least 1, got {length}")
    if "seed" not in spec:
        raise ConfigError("excitation.seed is required for random excitation")
    low, high = float(spec.get("low", -0.1)), float(spec.get("high", 0.1))
    if not low < high:
        raise ConfigError("excitation interval must satisfy low < high")
    x0 = spec.get("x0")
    x0 = None if x0 is None else np.asarray(x0, dtype=float)
    if x0 is not None and x0.shape != (n,):
        raise ConfigError(f"excitation.x0 must have {n} entries")
    return Excitation(length, int(spec["seed"]), low, high, x0)


def _controller(spec: dict, sys: LtiSystem, solver: dict) -> ControllerConfig:
    variant = spec.get("variant", UNCONSTRAINED)
    if variant not in VARIANTS:
        raise ConfigError(f"unknown controller variant {variant!r}; choose from {VARIANTS}")
    constraints = None
    if "u_max" in spec or "y_max" in spec:
        try:
            constraints = NormConstraints(float(spec["u_max"]), float(spec["y_max"]))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"norm constraints: {exc}") from None
    if variant in (CONSTRAINED, CONSTRAINED_IO) and constraints is None:
        raise ConfigError(f"variant {variant} needs u_max and y_max")
    caps = spec.get("caps") or {}
    window = spec.get("cost_window")
    x0 = spec.get("x0")
    try:
        opts = sdp.SolverOptions(
            feasibility_tol=float(solver.get("feasibility_tol", 1e-8)),
            gap_tol=float(solver.get("gap_tol", 1e-8)),
            max_iters=None if solver.get("max_iters") is None else int(solver["max_iters"]),
            retry_tol=None if solver.get("retry_tol", 1e-6) is None else float(solver.get("retry_tol", 1e-6)))
        return ControllerConfig(
            variant=variant,
            Q=_matrix(spec.get("Q", 1.0), "Q", sys.p),
            R=_matrix(spec.get("R", 1.0), "R", sys.m),
            constraints=constraints,
            run_length=int(spec.get("run_length", 50)),
            horizon=int(spec.get("horizon", 500)),
            fallback=spec.get("fallback", REUSE),
            x0=None if x0 is None else np.asarray(x0, dtype=float),
            lag=spec.get("lag", sys.n if variant == CONSTRAINED_IO else None),
            cost_window=None if window is None else (int(window[0]), int(window[1])),
            compress=bool(spec.get("compress", True)),
            caps=MultiplierCaps(float(caps.get("alpha", DEFAULT_CAPS.alpha)),
                                float(caps.get("tau", DEFAULT_CAPS.tau))),
            cap_ladder=tuple(float(v) for v in spec.get("cap_ladder", (1.0, 0.1, 0.01))),
            solver=opts,
            convergence_tol=None if spec.get("convergence_tol") is None
            else float(spec["convergence_tol"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"controller: {exc}") from exc


def parse_config(doc: dict, base: Path | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping")
    sys = _system(doc.get("system", "batch-reactor"))
    exc = _excitation(doc.get("excitation"), sys.n)
    ctl = _controller(doc.get("controller") or {}, sys, doc.get("solver") or {})
    out = doc.get("outputs") or {}
    base = base or Path(".")
    traj = doc.get("trajectory")
    if exc is None and traj is None:
        raise ConfigError("configuration needs an excitation section or a trajectory file")
    ver = doc.get("verify") or {}
    return ExperimentConfig(
        system=sys, excitation=exc, controller=ctl,
        output_dir=Path(out.get("directory", "out")),
        formats=tuple(out.get("formats", ("csv", "json", "plot-data", "png"))),
        trajectory=None if traj is None else (base / traj),
        verify_samples=int(ver.get("samples", 100)), verify_seed=int(ver.get("seed", 0)))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    cfg = parse_config(doc, path.parent)
    cfg.source = path
    return cfg


def shipped_config(name: str = "batch-reactor") -> Path:
    return Path(str(resources.files("rdpc") / "configs" / f"{name}.config"))
