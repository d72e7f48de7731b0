"""
Pathwise integration of the mild equation driven by a frozen Poisson path.

Production scheme: jump-adapted exponential Euler. Between jump times the
state advances as

    x <- exp(dt Acal) (x + dt F_eff(t, x)),   F_eff = F - int_Z G dnu,

and at a jump time the jump ``G(t, x(t-), z)`` is added to the velocity. The
time grid is the uniform grid of step ``T / ceil(T / dt_max)`` with every jump
time inserted.

Reference scheme: Picard iteration of the mild equation on the same grid, with
trapezoidal drift quadrature and the weighted sup-norm
``sup_t exp(-lambda t) ||X(t)||``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, NumericalError, PicardError
from .lyapunov import POperator, stretch
from .spectral_core import SpectralState, rotate

__all__ = [
    "PicardConfig", "SolverConfig", "Trajectory", "BatchResult", "monitor_levels",
    "base_grid", "jump_adapted_grid", "step_exponential", "integrate_path",
    "integrate_batch", "picard_solve", "picard_factor", "measured_ratio",
    "convolution_identity_check",
]


@dataclass(frozen=True)
class PicardConfig:
    tol: float = 1e-12
    max_iter: int = 100
    lambda_weight: float = 5.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("picard_tol", "must be positive")
        if int(self.max_iter) < 1:
            raise ConfigError("picard_max_iter", "must be at least 1")
        if not self.lambda_weight > 0:
            raise ConfigError("picard_lambda", "must be positive")


@dataclass(frozen=True)
class SolverConfig:
    dt_max: float
    T: float
    N_cap: float = 1e6
    picard: PicardConfig = field(default_factory=PicardConfig)

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ConfigError("T", "must be positive and finite")
        if not (self.dt_max > 0 and self.dt_max <= self.T):
            raise ConfigError("dt", f"must lie in (0, T={self.T}]")
        if not self.N_cap > 0:
            raise ConfigError("n_cap", "must be positive")

    @property
    def n_steps(self):
        return max(1, int(math.ceil(self.T / self.dt_max - 1e-9)))


def monitor_levels(N_cap):
    """Powers of two below ``N_cap`` followed by ``N_cap`` itself."""
    levels = []
    n = 1.0
    while n < N_cap:
        levels.append(n)
        n *= 2.0
    levels.append(float(N_cap))
    return levels


def base_grid(T, dt_max):
    n = max(1, int(math.ceil(T / dt_max - 1e-9)))
    h = T / n
    t = np.arange(n + 1) * h
    t[-1] = T
    return t, h


def jump_adapted_grid(T, dt_max, jump_times, extra=()):
    """Uniform grid merged with the jump times (and optional extra nodes).

    Returns ``(grid, jump_index)`` with ``grid[jump_index[j]] == jump_times[j]``.
    """
    t, _ = base_grid(T, dt_max)
    jt = np.asarray(jump_times, dtype=float)
    grid = np.union1d(np.union1d(t, jt), np.asarray(extra, dtype=float))
    return grid, np.searchsorted(grid, jt)


@dataclass(eq=False)
class Trajectory:
    """States of one path on its time grid.

    ``a``, ``b`` hold the right-continuous values at ``t``; at the grid index
    ``jump_index[j]`` the left limit is kept in ``pre_a[j]``, ``pre_b[j]``.
    ``stopping`` maps each monitored level ``n`` to the first grid time with
    ``||x|| > n`` (``None`` if not reached).
    """

    t: np.ndarray
    a: np.ndarray
    b: np.ndarray
    basis: object
    jump_index: np.ndarray
    pre_a: np.ndarray
    pre_b: np.ndarray
    marks: np.ndarray
    stopping: dict
    exploded: bool = False
    iterations: Optional[int] = None
    residuals: list = field(default_factory=list)
    factor: Optional[float] = None

    def __len__(self):
        return self.t.size

    def state(self, i):
        return SpectralState(self.a[i], self.b[i], self.basis)

    def pre_state(self, j):
        return SpectralState(self.pre_a[j], self.pre_b[j], self.basis)

    @property
    def final(self):
        return self.state(-1)

    def h_norms(self):
        mu = self.basis.mu
        return np.sqrt(np.sum((mu * self.a) ** 2 + self.b ** 2, axis=1))

    def v_values(self, nl):
        mu = self.basis.mu
        return 0.5 * self.h_norms() ** 2 + 0.5 * nl.M(stretch(self.a, mu))

    def phi_values(self, P, nl):
        return 0.5 * P.quadratic(self.a, self.b) + nl.M(stretch(self.a, self.basis.mu))

    def sidecar(self, **extra):
        d = {
            "levels": {repr(k): v for k, v in sorted(self.stopping.items())},
            "jump_times": self.t[self.jump_index].tolist(),
            "marks": np.asarray(self.marks).tolist(),
            "exploded": bool(self.exploded),
            "n_points": int(self.t.size),
        }
        if self.iterations is not None:
            d["iterations"] = int(self.iterations)
        d.update(extra)
        return d

    def write(self, csv_path, nl, beta=0.0, **provenance):
        """CSV of the path plus a JSON sidecar next to it (``.json`` suffix)."""
        P = POperator(beta, self.basis)
        n = self.basis.n_modes
        cols = (["t"] + [f"a_{k}" for k in range(1, n + 1)] + [f"b_{k}" for k in range(1, n + 1)]
                + ["h_norm", "V", "Phi"])
        data = np.column_stack([self.t, self.a, self.b, self.h_norms(), self.v_values(nl),
                                self.phi_values(P, nl)])
        with open(csv_path, "w", newline="") as fh:
            fh.write("".join(f"# {k}: {v}\n" for k, v in sorted(provenance.items())))
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in data:
                w.writerow([repr(float(v)) for v in row])
        side = str(csv_path).rsplit(".", 1)[0] + ".json"
        with open(side, "w") as fh:
            json.dump(self.sidecar(**provenance), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return side


def _advance(a, b, t, dt, spec, nu):
    """Exponential Euler step for batched arrays; ``dt`` scalar or (P, 1)."""
    v = spec.effective_velocity(t, a, b, nu)
    return rotate(a, b + dt * v, spec.basis.mu, dt)


def step_exponential(x, t, dt, spec, nu=None):
    """One exponential Euler step on an interval free of jumps."""
    spec.basis.check(x.basis)
    if dt == 0:
        return x
    a, b = _advance(x.a[None, :], x.b[None, :], t, float(dt), spec, nu)
    return SpectralState(a[0], b[0], x.basis)


def _norm(a, b, mu):
    return np.sqrt(np.sum((mu * a) ** 2 + b ** 2, axis=-1))


def integrate_path(u0, realization, spec, nu, cfg, levels=None):
    """Integrate one path on the jump-adapted grid.

    Explosion (norm above ``cfg.N_cap`` or a non-finite value) ends the
    integration; the returned trajectory is cut at that point and flagged.
    """
    spec.basis.check(u0.basis)
    if realization.T < cfg.T:
        raise ConfigError("T", "realization horizon shorter than the solver horizon")
    rz = realization.restrict(cfg.T)
    grid, jidx = jump_adapted_grid(cfg.T, cfg.dt_max, rz.times)
    levels = monitor_levels(cfg.N_cap) if levels is None else list(levels)
    mu = spec.basis.mu
    M, n = grid.size, mu.size
    A = np.empty((M, n))
    B = np.empty((M, n))
    pre_a = np.empty((rz.n_jumps, n))
    pre_b = np.empty((rz.n_jumps, n))
    is_jump = np.full(M, -1)
    is_jump[jidx] = np.arange(rz.n_jumps)
    A[0], B[0] = u0.a, u0.b
    stopping = {lv: None for lv in levels}
    a, b = u0.a[None, :].copy(), u0.b[None, :].copy()
    last = M - 1
    exploded = False
    nrm = float(_norm(a, b, mu)[0])
    for lv in levels:
        if nrm > lv:
            stopping[lv] = 0.0
    for i in range(1, M):
        a, b = _advance(a, b, grid[i - 1], grid[i] - grid[i - 1], spec, nu)
        j = is_jump[i]
        if j >= 0:
            pre_a[j], pre_b[j] = a[0], b[0]
            b = b + spec.jump_velocity(grid[i], a, b, rz.marks[j:j + 1])
        A[i], B[i] = a[0], b[0]
        nrm = float(_norm(a, b, mu)[0])
        for lv in levels:
            if stopping[lv] is None and nrm > lv:
                stopping[lv] = float(grid[i])
        if not np.isfinite(nrm) or nrm > cfg.N_cap:
            exploded = True
            last = i
            break
    keep = jidx <= last
    return Trajectory(grid[: last + 1], A[: last + 1], B[: last + 1], spec.basis, jidx[keep],
                      pre_a[keep], pre_b[keep], rz.marks[keep], stopping, exploded)


@dataclass
class BatchResult:
    """Stopping data of a batch of paths (states are streamed to an observer)."""

    levels: list
    tau: np.ndarray          # (n_levels, P), inf where never crossed
    tau_value: np.ndarray    # stop_value at the crossing, nan where never crossed
    exploded: np.ndarray     # (P,) bool
    step: float
    n_steps: int


def integrate_batch(a0, b0, realizations, spec, nu, cfg, observer=None, out_every=1,
                    levels=None, stop_value=None):
    """Vectorised jump-adapted stepper over ``P`` independent paths.

    ``observer(k, t, a, b)`` is called at grid indices ``k`` that are multiples
    of ``out_every`` and at the final index. Sub-intervals between jumps are
    processed in rounds so that each path sees exactly the grid used by
    :func:`integrate_path`. Exploded paths are set to NaN and stay there.
    """
    a = np.array(a0, dtype=float)
    b = np.array(b0, dtype=float)
    P, n = a.shape
    mu = spec.basis.mu
    grid, h = base_grid(cfg.T, cfg.dt_max)
    nsteps = grid.size - 1
    levels = monitor_levels(cfg.N_cap) if levels is None else list(levels)
    lv = np.asarray(levels, dtype=float)[:, None]
    tau = np.full((lv.shape[0], P), np.inf)
    tau_val = np.full((lv.shape[0], P), np.nan)
    exploded = np.zeros(P, dtype=bool)

    # flatten jumps: (step index, path, time, mark)
    paths, times, marks = [], [], []
    for p, rz in enumerate(realizations):
        r = rz.restrict(cfg.T)
        paths.append(np.full(r.n_jumps, p))
        times.append(r.times)
        marks.append(r.marks)
    paths = np.concatenate(paths) if paths else np.zeros(0, int)
    times = np.concatenate(times) if times else np.zeros(0)
    marks = np.concatenate(marks) if marks else np.zeros(0)
    kidx = np.searchsorted(grid, times, side="left")
    order = np.lexsort((times, paths, kidx))
    kidx, paths, times, marks = kidx[order], paths[order], times[order], marks[order]
    bounds = np.searchsorted(kidx, np.arange(nsteps + 2))

    def monitor(rows, t, aa, bb):
        nrm = _norm(aa, bb, mu)
        bad = ~np.isfinite(nrm) | (nrm > cfg.N_cap)
        hit = np.isinf(tau[:, rows]) & ((nrm > lv) | bad)
        if hit.any():
            vals = stop_value(aa, bb) if stop_value is not None else nrm
            for li in range(lv.shape[0]):
                sel = hit[li]
                if sel.any():
                    tau[li, rows[sel]] = t if np.ndim(t) == 0 else t[sel]
                    tau_val[li, rows[sel]] = vals[sel]
        if bad.any():
            exploded[rows[bad]] = True
            aa[bad] = np.nan
            bb[bad] = np.nan

    all_rows = np.arange(P)
    monitor(all_rows, 0.0, a, b)
    if observer is not None:
        observer(0, 0.0, a, b)
    for k in range(1, nsteps + 1):
        t0, t1 = grid[k - 1], grid[k]
        lo, hi = bounds[k], bounds[k + 1]
        if hi > lo:
            jp, jt, jz = paths[lo:hi], times[lo:hi], marks[lo:hi]
            rows, first = np.unique(jp, return_index=True)
            rank = np.arange(jp.size) - np.repeat(first, np.diff(np.append(first, jp.size)))
            ra, rb = a[rows].copy(), b[rows].copy()
            cur = np.full(rows.size, t0)
            pos_of = np.searchsorted(rows, jp)
            for r in range(int(rank.max()) + 1):
                sel = rank == r
                pos = pos_of[sel]
                dt = (jt[sel] - cur[pos])[:, None]
                sa, sb = _advance(ra[pos], rb[pos], cur[pos][:, None], dt, spec, nu)
                sb = sb + spec.jump_velocity(jt[sel][:, None], sa, sb, jz[sel])
                monitor(rows[pos], jt[sel], sa, sb)
                ra[pos], rb[pos] = sa, sb
                cur[pos] = jt[sel]
        dt = t1 - t0
        a, b = _advance(a, b, t0, dt, spec, nu)
        if hi > lo:
            dt_last = (t1 - cur)[:, None]
            ja, jb = _advance(ra, rb, cur[:, None], dt_last, spec, nu)
            a[rows], b[rows] = ja, jb
        monitor(all_rows, t1, a, b)
        if observer is not None and (k % out_every == 0 or k == nsteps):
            observer(k, t1, a, b)
    return BatchResult(levels, tau, tau_val, exploded, h, nsteps)


def picard_factor(T, L_f, L_g, lam):
    """Contraction factor ``(sqrt(T) L_f + L_g) / (2 lambda)``."""
    return (math.sqrt(T) * L_f + L_g) / (2.0 * lam)


def _lipschitz_pair(spec, nu):
    c = spec.constants
    L_f = c.L_f
    if L_f is None:
        L_f = spec.local_lipschitz_at(spec.R_trunc)
    L_g = c.L_g if c.L_g is not None else 0.0
    if L_f is None:
        from .coefficients import estimate_constants
        L_f = estimate_constants(spec, spec.R_trunc, 2000, 0, nu).L_R
    return float(L_f), float(L_g)


def _group_sum(ca, cb, t, mu):
    """``exp(t_i Acal) sum_{j<=i} exp(-t_j Acal) c_j`` for all ``i``."""
    ra, rb = rotate(ca, cb, mu, -t[:, None])
    sa, sb = np.cumsum(ra, axis=0), np.cumsum(rb, axis=0)
    return rotate(sa, sb, mu, t[:, None])


def picard_solve(u0, realization, spec, nu, cfg):
    """Picard iteration of the mild equation on the jump-adapted grid.

    The drift integral over each grid interval uses the trapezoid rule with
    the right endpoint evaluated at the left limit ``X(t_i-)``. Iteration stops
    when the weighted sup-norm of the increment drops below ``cfg.picard.tol``.

    Raises
    ------
    PicardError
        If ``max_iter`` iterations do not reach the tolerance.
    ConfigError
        If the model has no truncation radius.
    """
    if spec.R_trunc is None:
        raise ConfigError("r_trunc", "Picard solver needs a truncated (globally Lipschitz) drift")
    spec.basis.check(u0.basis)
    pc = cfg.picard
    rz = realization.restrict(cfg.T)
    grid, jidx = jump_adapted_grid(cfg.T, cfg.dt_max, rz.times)
    mu = spec.basis.mu
    M, n = grid.size, mu.size
    hs = np.diff(grid)[:, None]
    weight = np.exp(-pc.lambda_weight * grid)
    L_f, L_g = _lipschitz_pair(spec, nu)
    factor = picard_factor(cfg.T, L_f, L_g, pc.lambda_weight)

    free_a, free_b = rotate(u0.a[None, :], u0.b[None, :], mu, grid[:, None])
    Xa, Xb = free_a.copy(), free_b.copy()
    Pa, Pb = Xa.copy(), Xb.copy()
    residuals = []
    for it in range(1, int(pc.max_iter) + 1):
        f_post = spec.effective_velocity(grid[:, None], Xa, Xb, nu)
        f_pre = spec.effective_velocity(grid[:, None], Pa, Pb, nu)
        # rotated left-endpoint drift over each interval
        la, lb = rotate(np.zeros((M - 1, n)), f_post[:-1], mu, hs)
        ca = np.zeros((M, n))
        cb = np.zeros((M, n))
        ca[1:] = 0.5 * hs * la
        cb[1:] = 0.5 * hs * (lb + f_pre[1:])
        jb = np.zeros((M, n))
        if rz.n_jumps:
            jb[jidx] = spec.jump_velocity(grid[jidx][:, None], Pa[jidx], Pb[jidx], rz.marks)
            cb = cb + jb
        Ya, Yb = _group_sum(ca, cb, grid, mu)
        Ya, Yb = Ya + free_a, Yb + free_b
        Ypa, Ypb = Ya, Yb - jb
        inc = np.maximum(_norm(Ya - Xa, Yb - Xb, mu), _norm(Ypa - Pa, Ypb - Pb, mu))
        res = float(np.max(weight * inc))
        if not np.isfinite(res):
            raise NumericalError("Picard iterate became non-finite")
        residuals.append(res)
        Xa, Xb, Pa, Pb = Ya, Yb, Ypa, Ypb
        if res < pc.tol:
            break
    else:
        raise PicardError(residuals[-1], factor, int(pc.max_iter))
    return Trajectory(grid, Xa, Xb, spec.basis, jidx, Pa[jidx], Pb[jidx], rz.marks,
                      {}, False, iterations=it, residuals=residuals, factor=factor)


def measured_ratio(residuals, floor):
    """Largest ratio of successive Picard increments above ``floor``."""
    r = np.asarray(residuals, dtype=float)
    ok = (r[:-1] > floor) & (r[1:] > floor)
    if not ok.any():
        return 0.0
    return float(np.max(r[1:][ok] / r[:-1][ok]))


def convolution_identity_check(realization, G, tau, t, nu=None, state=None, dt=0.01):
    """Residual of the stopped stochastic convolution identity at one ``(tau, t)``.

    ``I(s)`` is the discrete convolution of the jump coefficient ``G`` (frozen
    at ``state``) against the compensated Poisson path: jumps at the jump
    times, minus left-point compensator increments on the grid. The left side
    ``exp((t - t^tau) Acal) I(t^tau)`` is built by the recursion of the
    stepper; the right side sums the integrand stopped at ``tau`` directly.
    Returns the phase-space norm of the difference.
    """
    basis = state.basis
    mu = basis.mu
    s = min(t, tau)
    if t <= 0:
        return 0.0
    rz = realization.restrict(realization.T)
    jt = rz.times[rz.times <= t]
    jz = rz.marks[: jt.size]
    grid, jidx = jump_adapted_grid(t, dt, jt, extra=[s] if s > 0 else [])
    a1 = state.a[None, :]
    b1 = state.b[None, :]
    comp = np.zeros(mu.size)
    if nu is not None:
        z, w = nu.nodes(0)
        for zi, wi in zip(z, w):
            comp = comp + wi * G.velocity(0.0, a1, b1, np.full(1, zi))[0]
    gj = G.velocity(0.0, np.repeat(a1, jt.size, 0), np.repeat(b1, jt.size, 0), jz) \
        if jt.size else np.zeros((0, mu.size))
    jump_at = {int(i): gj[j] for j, i in enumerate(jidx)}
    ks = int(np.searchsorted(grid, s))

    # left side: recursion up to index ks, then one group factor
    ia = np.zeros(mu.size)
    ib = np.zeros(mu.size)
    for i in range(1, ks + 1):
        h = grid[i] - grid[i - 1]
        ia, ib = rotate(ia, ib - h * comp, mu, h)
        if i in jump_at:
            ib = ib + jump_at[i]
    la, lb = rotate(ia, ib, mu, t - grid[ks])

    # right side: direct sum of stopped integrand
    ra = np.zeros(mu.size)
    rb = np.zeros(mu.size)
    for i in range(1, ks + 1):
        h = grid[i] - grid[i - 1]
        da, db = rotate(np.zeros(mu.size), -h * comp, mu, t - grid[i - 1])
        ra, rb = ra + da, rb + db
    for j, i in enumerate(jidx):
        if i <= ks:
            da, db = rotate(np.zeros(mu.size), gj[j], mu, t - grid[i])
            ra, rb = ra + da, rb + db
    return float(_norm(la - ra, lb - rb, mu))
