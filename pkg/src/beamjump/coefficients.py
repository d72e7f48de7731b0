"""
Drift, tension and jump coefficients of the beam model in mode coordinates.

All coefficient handles act on batched coefficient arrays ``a, b`` of shape
``(P, N)`` and return the velocity component of the corresponding phase-space
vector; the displacement component of both the drift ``F`` and the jump
coefficient ``G`` is identically zero.

The full drift is

    F(t, x) = (0, -f(t, x) - m(||B^{1/2} x_1||^2) B x_1),

optionally composed with the radial retraction onto a ball of radius
``R_trunc`` so that it becomes globally Lipschitz.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import CoefficientError
from .lyapunov import NonlinearityM, stretch
from .spectral_core import (SpectralState, build_clamped_basis, build_hinged_basis,
                            from_grid, grid_gradient, h_norm, to_grid)

__all__ = [
    "ZeroDrift", "LinearDamping", "PointwiseDrift", "ZeroJump", "SeparableJump",
    "PointwiseJump", "PointwiseCoefficient", "DeclaredConstants", "ModelSpec",
    "ConstantsReport", "ResolutionWarning", "eval_F", "eval_G", "truncate_drift",
    "lift_pointwise", "estimate_constants", "retract", "tension_lipschitz_bound",
]


class ResolutionWarning(UserWarning):
    """Grid evaluation of a pointwise coefficient is not resolved."""


def _as_batch(a, b):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    return a, b


# ---------------------------------------------------------------- drift terms

@dataclass(frozen=True)
class ZeroDrift:
    kind: str = "zero"

    def velocity(self, t, a, b):
        return np.zeros(np.shape(b))


@dataclass(frozen=True)
class LinearDamping:
    """``f(x) = beta * x_2`` (viscous damping of the velocity)."""

    beta: float
    kind: str = "damping"

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")

    def velocity(self, t, a, b):
        return self.beta * np.asarray(b, dtype=float)


@dataclass(frozen=True)
class PointwiseCoefficient:
    """Scalar field evaluated pointwise on the grid.

    ``func(t, xi, u, u_t, u_x)`` for drifts and ``func(t, xi, u, u_t, u_x, z)``
    for jump coefficients. Arguments broadcast: ``xi`` has shape ``(G+1,)``,
    field values ``(P, G+1)`` and marks ``(P, 1)``.

    ``growth`` is the declared constant ``L`` with ``|func|^2 <= L (1 + |u_t|^2)``
    (integrated against the mark measure for jump coefficients).
    """

    func: Callable
    has_mark: bool = False
    growth: Optional[float] = None
    name: str = "pointwise"

    def __call__(self, *args):
        return self.func(*args)

    def verify_growth(self, nu=None, n=2000, seed=0, scale=10.0):
        """Sample the declared growth bound; returns the worst ratio found."""
        rng = np.random.default_rng(seed)
        t = rng.uniform(0, 1, n)
        xi = rng.uniform(0, 1, n)
        u, ut, ux = (rng.uniform(-scale, scale, n) for _ in range(3))
        if self.has_mark:
            if nu is None:
                raise ValueError("jump coefficient growth needs the mark measure")
            z, w = nu.nodes(0)
            vals = np.stack([self.func(t, xi, u, ut, ux, np.full(n, zi)) for zi in z])
            sq = np.tensordot(w, np.broadcast_to(vals, (len(z), n)) ** 2, axes=(0, 0))
        else:
            sq = np.broadcast_to(self.func(t, xi, u, ut, ux), (n,)) ** 2
        return float(np.max(sq / (1.0 + ut ** 2)))

    def scaled(self, c):
        f = self.func
        return replace(self, func=lambda *args: c * f(*args), name=f"{c}*{self.name}")

    def __add__(self, other):
        if self.has_mark != other.has_mark:
            raise ValueError("cannot add drift and jump coefficients")
        f, g = self.func, other.func
        return PointwiseCoefficient(lambda *args: f(*args) + g(*args), self.has_mark,
                                    None, f"{self.name}+{other.name}")


def _refined_basis(basis):
    if basis.bc_kind == "hinged":
        return build_hinged_basis(basis.length, basis.n_modes, 2 * basis.grid_points)
    return build_clamped_basis(basis.length, basis.n_modes, 2 * basis.grid_points)


def _fields(basis, a, b):
    return to_grid(a, basis), to_grid(b, basis), grid_gradient(a, basis)


@dataclass(frozen=True, eq=False)
class PointwiseDrift:
    """Drift ``f`` obtained by projecting a pointwise field onto the modes."""

    coef: PointwiseCoefficient
    basis: object
    kind: str = "pointwise"

    def velocity(self, t, a, b):
        a, b = _as_batch(a, b)
        u, ut, ux = _fields(self.basis, a, b)
        vals = np.broadcast_to(self.coef(t, self.basis.x, u, ut, ux), u.shape)
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise CoefficientError(f"{self.coef.name} non-finite at t={t}, "
                                   f"xi={self.basis.x[bad[-1]]:.6g}")
        return from_grid(vals, self.basis)


# ----------------------------------------------------------------- jump terms

@dataclass(frozen=True)
class ZeroJump:
    kind: str = "zero"
    state_independent: bool = True

    def velocity(self, t, a, b, z):
        return np.zeros(np.shape(b))


@dataclass(frozen=True, eq=False)
class SeparableJump:
    """``g(z) = mark_map(z) * shape`` with a fixed mode vector ``shape``."""

    shape: np.ndarray
    mark_map: Optional[Callable] = None
    kind: str = "separable"
    state_independent: bool = True

    def __post_init__(self):
        s = np.array(self.shape, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "shape", s)

    def velocity(self, t, a, b, z):
        z = np.asarray(z, dtype=float)
        phi = z if self.mark_map is None else np.asarray(self.mark_map(z), dtype=float)
        out = phi.reshape(-1, 1) * self.shape
        return np.broadcast_to(out, np.broadcast_shapes(out.shape, np.shape(b))).copy()


@dataclass(frozen=True, eq=False)
class PointwiseJump:
    """Jump coefficient obtained from a pointwise field ``Pi(..., z)``."""

    coef: PointwiseCoefficient
    basis: object
    kind: str = "pointwise"
    state_independent: bool = False

    def velocity(self, t, a, b, z):
        a, b = _as_batch(a, b)
        u, ut, ux = _fields(self.basis, a, b)
        zz = np.asarray(z, dtype=float).reshape(-1, 1)
        vals = np.broadcast_to(self.coef(t, self.basis.x, u, ut, ux, zz), u.shape)
        if not np.all(np.isfinite(vals)):
            raise CoefficientError(f"{self.coef.name} non-finite at t={t}")
        return from_grid(vals, self.basis)


def _compensator(jump, t, a, b, nu):
    """``int_Z g(t, x, z) nu(dz)`` for batched ``a, b`` (fixed quadrature nodes)."""
    if nu is None or isinstance(jump, ZeroJump):
        return np.zeros(np.shape(b))
    z, w = nu.nodes(0)
    acc = np.zeros(np.shape(b))
    n = np.shape(b)[0]
    for zi, wi in zip(z, w):
        acc = acc + wi * jump.velocity(t, a, b, np.full(n, zi))
    return acc


def lift_pointwise(coef, basis, check=True):
    """Wrap a pointwise coefficient as a mode-space drift or jump handle.

    With ``check`` the lift is evaluated at a probe state on the basis and on a
    grid twice as fine; a relative change above 1e-6 raises a
    :class:`ResolutionWarning`.
    """
    cls = PointwiseJump if coef.has_mark else PointwiseDrift
    handle = cls(coef, basis)
    if check:
        fine = cls(coef, _refined_basis(basis))
        n = basis.n_modes
        a = np.ones((1, n)) / np.arange(1, n + 1) ** 2 / basis.mu
        b = np.ones((1, n)) / np.arange(1, n + 1)
        args = (0.0, a, b, np.ones(1)) if coef.has_mark else (0.0, a, b)
        coarse_val = handle.velocity(*args)
        fine_val = fine.velocity(*args)
        scale = max(np.max(np.abs(fine_val)), 1e-300)
        change = float(np.max(np.abs(coarse_val - fine_val)) / scale)
        if change > 1e-6:
            warnings.warn(f"{coef.name}: doubling the grid changes the projection by "
                          f"{change:.2e} relative", ResolutionWarning, stacklevel=2)
    return handle


# -------------------------------------------------------------------- model

@dataclass(frozen=True)
class DeclaredConstants:
    """User-declared structural constants; ``None`` means not declared."""

    K_f: Optional[float] = None
    K_g: Optional[float] = None
    L_f: Optional[float] = None
    L_g: Optional[float] = None
    R_g: Optional[float] = None
    K: Optional[float] = None

    def as_dict(self):
        return {k: getattr(self, k) for k in ("K_f", "K_g", "L_f", "L_g", "R_g", "K")}


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Coefficients ``(m, f, g)`` on a spectral basis with declared constants.

    ``local_lipschitz`` is a tuple of ``(R, L_R)`` pairs for the full drift on
    balls of radius ``R``. ``R_trunc`` activates the radial retraction of the
    drift; the jump coefficient is never truncated.
    """

    basis: object
    nl: NonlinearityM = field(default_factory=NonlinearityM)
    drift: object = field(default_factory=ZeroDrift)
    jump: object = field(default_factory=ZeroJump)
    constants: DeclaredConstants = field(default_factory=DeclaredConstants)
    local_lipschitz: tuple = ()
    R_trunc: Optional[float] = None
    name: str = "model"

    @property
    def beta(self):
        """Damping coefficient when ``f`` is linear velocity damping, else 0."""
        return float(self.drift.beta) if isinstance(self.drift, LinearDamping) else 0.0

    def drift_velocity(self, t, a, b):
        """Velocity component of ``F`` (batched), with retraction if active."""
        a, b = _as_batch(a, b)
        mu = self.basis.mu
        if self.R_trunc is not None:
            norm = np.sqrt(np.sum((mu * a) ** 2 + b ** 2, axis=1, keepdims=True))
            scale = np.where(norm > self.R_trunc, self.R_trunc / np.maximum(norm, 1e-300), 1.0)
            a = a * scale
            b = b * scale
        out = -self.drift.velocity(t, a, b)
        if not self.nl.is_zero:
            m = np.asarray(self.nl.m(stretch(a, mu)), dtype=float).reshape(-1, 1)
            out = out - m * (mu * a)
        return out

    def jump_velocity(self, t, a, b, z):
        a, b = _as_batch(a, b)
        return self.jump.velocity(t, a, b, z)

    def compensator(self, t, a, b, nu):
        a, b = _as_batch(a, b)
        return _compensator(self.jump, t, a, b, nu)

    def effective_velocity(self, t, a, b, nu):
        """``F - int G dnu``: drift seen between jumps of the Poisson measure."""
        out = self.drift_velocity(t, a, b)
        if nu is not None and not isinstance(self.jump, ZeroJump):
            out = out - self.compensator(t, a, b, nu)
        return out

    def local_lipschitz_at(self, R):
        """Smallest tabulated ``L_R`` with radius at least ``R`` (or None)."""
        cands = sorted((r, l) for r, l in self.local_lipschitz if r >= R)
        return cands[0][1] if cands else None


def eval_F(t, x, spec):
    spec.basis.check(x.basis)
    v = spec.drift_velocity(t, x.a, x.b)[0]
    return SpectralState(np.zeros_like(x.a), v, x.basis)


def eval_G(t, x, z, spec):
    spec.basis.check(x.basis)
    v = spec.jump_velocity(t, x.a, x.b, np.atleast_1d(z))[0]
    if not np.all(np.isfinite(v)):
        raise CoefficientError(f"jump coefficient non-finite at t={t}, z={z}")
    return SpectralState(np.zeros_like(x.a), v, x.basis)


def retract(a, b, mu, R):
    """Metric projection onto the ball of radius ``R`` in the phase-space norm."""
    a, b = _as_batch(a, b)
    norm = np.sqrt(np.sum((mu * a) ** 2 + b ** 2, axis=1, keepdims=True))
    scale = np.where(norm > R, R / np.maximum(norm, 1e-300), 1.0)
    return a * scale, b * scale


def truncate_drift(spec, R):
    """Copy of ``spec`` whose drift is composed with the retraction onto radius ``R``."""
    if not R > 0:
        raise ValueError("truncation radius must be positive")
    return replace(spec, R_trunc=float(R))


def tension_lipschitz_bound(nl, R, mu1):
    """Lipschitz bound of ``x -> m(y) B x_1`` on the ball of radius ``R``.

    Valid for the affine tension ``m(r) = a + b r``: ``a + 3 b R^2 / mu1``.
    """
    if nl.func is not None:
        raise ValueError("closed-form bound only for affine tension")
    return nl.a + 3.0 * nl.b * R * R / mu1


# ------------------------------------------------------ empirical constants

@dataclass
class ConstantsReport:
    """Empirical sup-ratios of the structural constants on a probe ball."""

    radius: float
    n_probes: int
    seed: int
    K_f: float
    K_F_ball: float
    L_f: float
    L_R: float
    K_g: Optional[float]
    L_g: Optional[float]
    R_g: Optional[float]
    K: Optional[float]
    violations: list
    probes: dict = field(repr=False, default_factory=dict)

    def to_dict(self):
        keys = ("radius", "n_probes", "seed", "K_f", "K_F_ball", "L_f", "L_R",
                "K_g", "L_g", "R_g", "K", "violations")
        return {k: getattr(self, k) for k in keys}


def _probe_set(basis, R, n, rng):
    """Probe points in the ball and nearby partners (orthonormal coordinates)."""
    dim = 2 * basis.n_modes
    d = rng.standard_normal((n, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.uniform(0.0, 1.0, (n, 1))
    r[: n // 4] = 1.0
    x = R * r * d
    # the origin and the scaled coordinate axes attain the sup of growth ratios
    # for constant and single-component coefficients
    if n > dim + 1:
        x[n - dim - 1: n - 1] = R * np.eye(dim)
        x[n - 1] = 0.0
    # partner offsets: half random directions, half coordinate axes
    e = rng.standard_normal((n, dim))
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    axes = rng.integers(0, dim, n // 2)
    e[: n // 2] = 0.0
    e[np.arange(n // 2), axes] = 1.0
    y = x + (0.05 * R * rng.uniform(0.1, 1.0, (n, 1))) * e
    ny = np.linalg.norm(y, axis=1, keepdims=True)
    y = np.where(ny > R, y * (R / ny), y)
    return x, y


def _split(v, mu):
    n = mu.size
    return v[:, :n] / mu, v[:, n:]


def estimate_constants(spec, R, n_probes=1000, seed=0, nu=None):
    """Empirical constants on the ball of radius ``R``.

    ``K_f`` and ``L_f`` refer to ``f`` alone; ``K_F_ball`` and ``L_R`` to the
    full drift including the tension term, which is only locally bounded.
    Jump constants need the mark measure ``nu``. Declared constants smaller
    than the empirical values are listed in ``violations``.
    """
    if n_probes < 100:
        raise ValueError("n_probes must be at least 100")
    basis = spec.basis
    mu = basis.mu
    rng = np.random.default_rng(seed)
    xs, ys = _probe_set(basis, R, n_probes, rng)
    ax, bx = _split(xs, mu)
    ay, by = _split(ys, mu)
    nx2 = np.sum(xs ** 2, axis=1)
    diff = np.linalg.norm(xs - ys, axis=1)
    ok = diff > 0

    fx = spec.drift.velocity(0.0, ax, bx)
    fy = spec.drift.velocity(0.0, ay, by)
    K_f = float(np.max(np.sum(fx ** 2, axis=1) / (1 + nx2)))
    L_f = float(np.max(np.linalg.norm(fx - fy, axis=1)[ok] / diff[ok]))
    Fx = spec.drift_velocity(0.0, ax, bx)
    Fy = spec.drift_velocity(0.0, ay, by)
    K_F = float(np.max(np.sum(Fx ** 2, axis=1) / (1 + nx2)))
    L_R = float(np.max(np.linalg.norm(Fx - Fy, axis=1)[ok] / diff[ok]))

    K_g = L_g = R_g = K = None
    if nu is not None:
        z, w = nu.nodes(0)
        gsq = np.zeros(n_probes)
        dsq = np.zeros(n_probes)
        for zi, wi in zip(z, w):
            zz = np.full(n_probes, zi)
            gx = spec.jump.velocity(0.0, ax, bx, zz)
            gy = spec.jump.velocity(0.0, ay, by, zz)
            gsq += wi * np.sum(gx ** 2, axis=1)
            dsq += wi * np.sum((gx - gy) ** 2, axis=1)
        zero = np.zeros((1, basis.n_modes))
        g0 = sum(wi * float(np.sum(spec.jump.velocity(0.0, zero, zero, np.full(1, zi)) ** 2))
                 for zi, wi in zip(z, w))
        K_g = float(np.max(gsq / (1 + nx2)))
        L_g = float(np.sqrt(np.max(dsq[ok] / diff[ok] ** 2)))
        K = float(g0)
        pos = nx2 > 0
        R_g = float(np.sqrt(max(0.0, np.max((gsq[pos] - K) / nx2[pos])))) if pos.any() else 0.0

    violations = []
    declared = spec.constants.as_dict()
    empirical = {"K_f": K_f, "L_f": L_f, "K_g": K_g, "L_g": L_g, "R_g": R_g, "K": K}
    for key, emp in empirical.items():
        dec = declared[key]
        if dec is None or emp is None:
            continue
        if emp > dec * (1 + 1e-9) + 1e-9:
            violations.append(f"{key}: declared {dec:.6g} < empirical {emp:.6g} on ball R={R:g}")
    return ConstantsReport(float(R), int(n_probes), int(seed), K_f, K_F, L_f, L_R, K_g, L_g,
                           R_g, K, violations, {"x": xs, "y": ys})
