"""
Run configuration: INI text <-> ``RunConfig`` <-> solver objects.

``emit`` writes every field in a fixed order with ``repr`` floats, so
``emit(parse(emit(c))) == emit(c)``. Field names in :class:`ConfigError`
messages are ``section.key``.
"""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .coefficients import (DeclaredConstants, LinearDamping, ModelSpec, PointwiseCoefficient,
                           SeparableJump, ZeroDrift, ZeroJump, lift_pointwise)
from .ensemble_harness import InitialCondition
from .errors import ConfigError
from .jump_noise import DensityMarks, FiniteAtoms
from .lyapunov import NonlinearityM
from .pathwise_solver import PicardConfig, SolverConfig
from .spectral_core import build_clamped_basis, build_hinged_basis

__all__ = ["RunConfig", "parse", "emit", "load", "config_hash", "build", "Built",
           "DRIFT_FIELDS", "JUMP_FIELDS", "portable"]

# pointwise fields: name -> factory(params) -> PointwiseCoefficient
DRIFT_FIELDS = {
    "velocity": lambda beta: PointwiseCoefficient(
        lambda t, x, u, ut, ux: beta * ut, False, beta * beta, "beta*u_t"),
}
JUMP_FIELDS = {
    "multiplicative": lambda: PointwiseCoefficient(
        lambda t, x, u, ut, ux, z: z * ut, True, None, "z*u_t"),
    "multiplicative-affine": lambda: PointwiseCoefficient(
        lambda t, x, u, ut, ux, z: z * (1.0 + ut), True, None, "z*(1+u_t)"),
}


def _floats(text):
    text = text.strip()
    return tuple(float(v) for v in text.split(",")) if text else ()


def _fmt_floats(vals):
    return ", ".join(repr(float(v)) for v in vals)


def _opt(text):
    text = text.strip().lower()
    return None if text in ("", "none") else float(text)


def _fmt_opt(v):
    return "none" if v is None else repr(float(v))


@dataclass(frozen=True)
class BasisSection:
    bc_kind: str = "hinged"
    length: float = 1.0
    n_modes: int = 8
    grid_points: int = 0            # 0 selects 2 * n_modes


@dataclass(frozen=True)
class ModelSection:
    m_a: float = 0.0
    m_b: float = 0.0
    alpha: float = 1.0
    drift: str = "none"             # none | damping | pointwise
    beta: float = 0.0
    drift_field: str = "velocity"
    jump: str = "none"              # none | additive | pointwise
    jump_mode: int = 1
    jump_field: str = "multiplicative"
    K_f: Optional[float] = None
    K_g: Optional[float] = None
    L_f: Optional[float] = None
    L_g: Optional[float] = None
    R_g: Optional[float] = None
    K: Optional[float] = None
    r_trunc: Optional[float] = None


@dataclass(frozen=True)
class NoiseSection:
    kind: str = "none"              # none | atoms | uniform
    marks: tuple = ()
    masses: tuple = ()
    low: float = -1.0
    high: float = 1.0
    total_mass: float = 1.0
    n_nodes: int = 64


@dataclass(frozen=True)
class InitialSection:
    a: tuple = ()
    b: tuple = ()
    spread: float = 0.0


@dataclass(frozen=True)
class SolverSection:
    dt: float = 1e-3
    T: float = 1.0
    n_cap: float = 1e6
    picard_tol: float = 1e-12
    picard_max_iter: int = 100
    picard_lambda: float = 5.0
    picard_dt_grid: tuple = (1e-2, 5e-3, 2.5e-3)


@dataclass(frozen=True)
class HarnessSection:
    paths: int = 1000
    levels: tuple = (4.0, 8.0, 16.0)
    output_dt: float = 0.1
    checks: tuple = ()
    lambda_factor: float = 0.9
    dt_levels: int = 1
    fit_window: Optional[tuple] = None
    isometry_samples: int = 100000


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    output_dir: str = ""


SECTIONS = (("basis", BasisSection), ("model", ModelSection), ("noise", NoiseSection),
            ("initial", InitialSection), ("solver", SolverSection),
            ("harness", HarnessSection), ("run", RunSection))


@dataclass(frozen=True)
class RunConfig:
    basis: BasisSection = field(default_factory=BasisSection)
    model: ModelSection = field(default_factory=ModelSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    initial: InitialSection = field(default_factory=InitialSection)
    solver: SolverSection = field(default_factory=SolverSection)
    harness: HarnessSection = field(default_factory=HarnessSection)
    run: RunSection = field(default_factory=RunSection)
    name: str = "custom"

    def with_overrides(self, seed=None, out=None, paths=None, dt=None):
        c = self
        if seed is not None:
            c = replace(c, run=replace(c.run, seed=int(seed)))
        if out is not None:
            c = replace(c, run=replace(c.run, output_dir=str(out)))
        if paths is not None:
            c = replace(c, harness=replace(c.harness, paths=int(paths)))
        if dt is not None:
            c = replace(c, solver=replace(c.solver, dt=float(dt)))
        validate(c)
        return c


_TUPLE_KEYS = {"marks", "masses", "a", "b", "picard_dt_grid", "levels"}


def _encode(key, value):
    if key == "checks":
        return ", ".join(value)
    if key == "fit_window":
        return "none" if value is None else _fmt_floats(value)
    if key in _TUPLE_KEYS:
        return _fmt_floats(value)
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _decode(section, key, text, default):
    where = f"{section}.{key}"
    try:
        if key == "checks":
            return tuple(v.strip() for v in text.split(",") if v.strip())
        if key == "fit_window":
            v = _opt(text) if "," not in text else _floats(text)
            if v is not None and (not isinstance(v, tuple) or len(v) != 2):
                raise ValueError("expected two comma-separated numbers")
            return v
        if key in _TUPLE_KEYS:
            return _floats(text)
        if key in ("K_f", "K_g", "L_f", "L_g", "R_g", "K", "r_trunc"):
            return _opt(text)
        if isinstance(default, int) and not isinstance(default, bool):
            return int(text.strip())
        if isinstance(default, float):
            return float(text.strip())
        return text.strip()
    except ValueError as exc:
        raise ConfigError(where, f"cannot parse {text!r}: {exc}") from None


def emit(cfg):
    """Canonical INI text of a configuration."""
    lines = [f"# beamjump run configuration: {cfg.name}"]
    for sec, _cls in SECTIONS:
        obj = getattr(cfg, sec)
        lines.append(f"[{sec}]")
        for f in fields(obj):
            lines.append(f"{f.name} = {_encode(f.name, getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def parse(text, name="custom"):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc)) from None
    known = {s for s, _ in SECTIONS}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(sec, "unknown section")
    kwargs = {}
    for sec, cls in SECTIONS:
        base = cls()
        vals = {}
        if cp.has_section(sec):
            names = {f.name for f in fields(cls)}
            for key, raw in cp.items(sec):
                if key not in names:
                    raise ConfigError(f"{sec}.{key}", "unknown key")
                vals[key] = _decode(sec, key, raw, getattr(base, key))
        kwargs[sec] = cls(**vals)
    first = text.lstrip().splitlines()[0] if text.strip() else ""
    if first.startswith("# beamjump run configuration:"):
        name = first.split(":", 1)[1].strip()
    cfg = RunConfig(**kwargs, name=name)
    validate(cfg)
    return cfg


def load(path):
    with open(path) as fh:
        return parse(fh.read())


def portable(cfg):
    """The configuration without its output location, which never affects results."""
    return replace(cfg, run=replace(cfg.run, output_dir=""))


def config_hash(cfg):
    return hashlib.sha256(emit(portable(cfg)).encode()).hexdigest()


def _need(cond, where, msg):
    if not cond:
        raise ConfigError(where, msg)


def _pos(v):
    return v is not None and math.isfinite(v) and v > 0


def validate(cfg):
    b, m, n, s, h, r = cfg.basis, cfg.model, cfg.noise, cfg.solver, cfg.harness, cfg.run
    _need(b.bc_kind in ("hinged", "clamped"), "basis.bc_kind", "must be hinged or clamped")
    _need(_pos(b.length), "basis.length", "must be positive")
    _need(b.n_modes >= 1, "basis.n_modes", "must be at least 1")
    _need(b.grid_points == 0 or b.grid_points >= 2 * b.n_modes, "basis.grid_points",
          "must be 0 (auto) or at least 2 * n_modes")
    _need(m.m_a >= 0 and m.m_b >= 0, "model.m_a", "tension coefficients must be nonnegative")
    _need(_pos(m.alpha), "model.alpha", "must be positive")
    _need(m.drift in ("none", "damping", "pointwise"), "model.drift", "unknown drift kind")
    _need(m.beta >= 0, "model.beta", "must be nonnegative")
    _need(m.drift != "pointwise" or m.drift_field in DRIFT_FIELDS, "model.drift_field",
          f"must be one of {sorted(DRIFT_FIELDS)}")
    _need(m.jump in ("none", "additive", "pointwise"), "model.jump", "unknown jump kind")
    _need(1 <= m.jump_mode <= b.n_modes, "model.jump_mode", "must index a retained mode")
    _need(m.jump != "pointwise" or m.jump_field in JUMP_FIELDS, "model.jump_field",
          f"must be one of {sorted(JUMP_FIELDS)}")
    for key in ("K_f", "K_g", "L_f", "L_g", "R_g", "K"):
        v = getattr(m, key)
        _need(v is None or (math.isfinite(v) and v >= 0), f"model.{key}", "must be nonnegative")
    _need(m.r_trunc is None or _pos(m.r_trunc), "model.r_trunc", "must be positive or none")
    _need(n.kind in ("none", "atoms", "uniform"), "noise.kind", "must be none, atoms or uniform")
    if n.kind == "atoms":
        _need(len(n.marks) == len(n.masses) and len(n.marks) > 0, "noise.masses",
              "one mass per mark required")
        _need(all(w >= 0 for w in n.masses) and sum(n.masses) > 0, "noise.masses",
              "masses must be nonnegative with positive total")
    if n.kind == "uniform":
        _need(n.high > n.low, "noise.high", "must exceed noise.low")
        _need(_pos(n.total_mass), "noise.total_mass", "must be positive")
        _need(n.n_nodes >= 2, "noise.n_nodes", "must be at least 2")
    _need(m.jump == "none" or n.kind != "none", "noise.kind", "jump coefficient needs noise")
    _need(len(cfg.initial.a) <= b.n_modes and len(cfg.initial.b) <= b.n_modes, "initial.a",
          "more coefficients than modes")
    _need(cfg.initial.spread >= 0, "initial.spread", "must be nonnegative")
    _need(_pos(s.T), "solver.T", "must be positive")
    _need(_pos(s.dt) and s.dt <= s.T, "solver.dt", "must lie in (0, T]")
    _need(_pos(s.n_cap), "solver.n_cap", "must be positive")
    _need(_pos(s.picard_tol), "solver.picard_tol", "must be positive")
    _need(s.picard_max_iter >= 1, "solver.picard_max_iter", "must be at least 1")
    _need(_pos(s.picard_lambda), "solver.picard_lambda", "must be positive")
    _need(len(s.picard_dt_grid) >= 2 and all(_pos(v) and v <= s.T for v in s.picard_dt_grid),
          "solver.picard_dt_grid", "needs at least two steps in (0, T]")
    _need(h.paths >= 1, "harness.paths", "must be at least 1")
    _need(all(_pos(v) for v in h.levels), "harness.levels", "levels must be positive")
    _need(_pos(h.output_dt), "harness.output_dt", "must be positive")
    known = {"khasminskii", "stability", "supermartingale"}
    _need(set(h.checks) <= known, "harness.checks", f"allowed: {sorted(known)}")
    _need(0 < h.lambda_factor <= 1, "harness.lambda_factor", "must lie in (0, 1]")
    _need(h.dt_levels in (1, 2), "harness.dt_levels", "must be 1 or 2")
    _need(h.isometry_samples >= 2, "harness.isometry_samples", "must be at least 2")
    _need(0 <= r.seed < 2 ** 64, "run.seed", "must be an unsigned 64-bit integer")


@dataclass(frozen=True, eq=False)
class Built:
    basis: object
    spec: ModelSpec
    nu: object
    u0: InitialCondition
    solver: SolverConfig


def build(cfg, dt=None):
    """Instantiate basis, model, mark measure, initial condition and solver settings."""
    b, m, n, s = cfg.basis, cfg.model, cfg.noise, cfg.solver
    G = b.grid_points or 2 * b.n_modes
    if b.bc_kind == "hinged":
        basis = build_hinged_basis(b.length, b.n_modes, G)
    else:
        basis = build_clamped_basis(b.length, b.n_modes, G)
    nl = NonlinearityM.affine(m.m_a, m.m_b, m.alpha)
    if m.drift == "damping":
        drift = LinearDamping(m.beta)
    elif m.drift == "pointwise":
        drift = lift_pointwise(DRIFT_FIELDS[m.drift_field](m.beta), basis)
    else:
        drift = ZeroDrift()
    if m.jump == "additive":
        shape = np.zeros(b.n_modes)
        shape[m.jump_mode - 1] = 1.0
        jump = SeparableJump(shape)
    elif m.jump == "pointwise":
        jump = lift_pointwise(JUMP_FIELDS[m.jump_field](), basis)
    else:
        jump = ZeroJump()
    nu = None
    if n.kind == "atoms":
        nu = FiniteAtoms(np.array(n.marks), np.array(n.masses))
    elif n.kind == "uniform":
        width = n.high - n.low
        nu = DensityMarks(lambda z: np.full(np.shape(z), 1.0 / width), (n.low, n.high),
                          n.total_mass, n.n_nodes, name="uniform")
    consts = DeclaredConstants(m.K_f, m.K_g, m.L_f, m.L_g, m.R_g, m.K)
    spec = ModelSpec(basis, nl, drift, jump, consts, (), m.r_trunc, cfg.name)
    u0 = InitialCondition(np.array(cfg.initial.a), np.array(cfg.initial.b), cfg.initial.spread)
    solver = SolverConfig(s.dt if dt is None else dt, s.T, s.n_cap,
                          PicardConfig(s.picard_tol, s.picard_max_iter, s.picard_lambda))
    return Built(basis, spec, nu, u0, solver)
