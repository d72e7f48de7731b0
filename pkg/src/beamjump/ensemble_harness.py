"""
Monte Carlo ensembles and statistical checks of the moment bounds.

A bound check compares an ensemble mean with a bound at each output time. It
passes at a point only if

    estimate <= bound + h99   and   estimate <= 1.05 * bound,

where ``h99`` is the 99% normal half-width of the estimate, so a check never
passes on confidence-interval width alone.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coefficients import estimate_constants
from .errors import FitRefused
from .jump_noise import STREAM_INITIAL, make_rng, sample_realization
from .lyapunov import POperator, khasminskii_rate, lambda_window, stretch
from .pathwise_solver import integrate_batch

__all__ = [
    "InitialCondition", "EnsembleStats", "CheckReport", "DecayFit", "run_ensemble",
    "khasminskii_check", "stability_check", "supermartingale_check", "decay_fit",
    "combine_levels", "write_report", "write_curves", "Z95", "Z99",
]

Z95 = 1.959963984540054
Z99 = 2.5758293035489004
# relative slack absorbing floating-point rounding in bound evaluations
ROUND = 1e-12


@dataclass(frozen=True, eq=False)
class InitialCondition:
    """Initial state ``(a, b)`` plus optional isotropic Gaussian perturbation.

    The perturbation has standard deviation ``spread`` per coordinate in the
    orthonormal coordinates ``(mu a, b)`` and is drawn from the per-path
    initial-condition stream.
    """

    a: np.ndarray
    b: np.ndarray
    spread: float = 0.0

    def sample(self, basis, n_paths, seed):
        n = basis.n_modes
        a = np.zeros(n)
        b = np.zeros(n)
        a[: len(self.a)] = self.a
        b[: len(self.b)] = self.b
        A = np.tile(a, (n_paths, 1))
        B = np.tile(b, (n_paths, 1))
        if self.spread > 0:
            for p in range(n_paths):
                z = make_rng(seed, p, STREAM_INITIAL).standard_normal(2 * n) * self.spread
                A[p] += z[:n] / basis.mu
                B[p] += z[n:]
        return A, B


def _mean_ci(x, axis=-1):
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    m = x.mean(axis=axis)
    if n < 2:
        nan = np.full_like(m, np.nan)
        return m, nan, nan
    sd = x.std(axis=axis, ddof=1)
    return m, Z95 * sd / math.sqrt(n), Z99 * sd / math.sqrt(n)


@dataclass(eq=False)
class EnsembleStats:
    """Per-path observables on the output grid and their ensemble summaries.

    Arrays with a path axis have shape ``(n_out, P)``; stopping data has shape
    ``(n_levels, P)``.
    """

    t: np.ndarray
    n_paths: int
    seed: int
    lam: float
    sq_norm: np.ndarray
    V: np.ndarray
    Phi: np.ndarray
    energy0: np.ndarray
    levels: list
    tau: np.ndarray
    tau_value: np.ndarray
    exploded: np.ndarray
    dt: float
    max_norm: float
    meta: dict = field(default_factory=dict)

    @property
    def degenerate(self):
        return self.n_paths < 2

    @property
    def explosion_count(self):
        return int(self.exploded.sum())

    @property
    def mean_sq_norm(self):
        return _mean_ci(self.sq_norm)

    @property
    def mean_V(self):
        return _mean_ci(self.V)

    @property
    def phi_exp(self):
        return self.Phi * np.exp(self.lam * self.t)[:, None]

    @property
    def mean_Phi_exp(self):
        return _mean_ci(self.phi_exp)

    def level_index(self, n):
        for i, lv in enumerate(self.levels):
            if lv == n:
                return i
        raise KeyError(f"level {n} was not monitored")

    def stopped_V(self, n):
        """Per-path ``V(u(t ^ tau_n))`` on the output grid."""
        i = self.level_index(n)
        crossed = self.tau[i][None, :] <= self.t[:, None]
        return np.where(crossed, self.tau_value[i][None, :], self.V)

    def tail(self, n):
        """Empirical ``P(tau_n <= t)`` on the output grid."""
        i = self.level_index(n)
        return np.mean(self.tau[i][None, :] <= self.t[:, None], axis=1)

    def summary(self):
        m, h95, h99 = self.mean_sq_norm
        return {
            "n_paths": self.n_paths, "seed": self.seed, "dt": self.dt, "lambda": self.lam,
            "explosions": self.explosion_count, "max_norm": self.max_norm,
            "t": self.t.tolist(), "mean_sq_norm": m.tolist(), "ci95": h95.tolist(),
            "ci99": h99.tolist(),
        }


def run_ensemble(spec, nu, u0, cfg, n_paths, seed, out_dt=None, levels=(), lam=0.0):
    """Simulate ``n_paths`` independent paths and collect observables.

    Path ``p`` uses noise stream ``(seed, p, 0)`` and initial stream
    ``(seed, p, 1)``; results do not depend on evaluation order. ``lam`` is
    the weight in ``Phi(u(t)) exp(lam t)``; ``Phi`` uses ``P`` with the
    model's damping coefficient.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    basis = spec.basis
    mu = basis.mu
    nl = spec.nl
    P = POperator(spec.beta, basis)
    a0, b0 = u0.sample(basis, n_paths, seed)
    if nu is not None:
        rzs = [sample_realization(nu, cfg.T, seed, p) for p in range(n_paths)]
    else:
        from .jump_noise import PoissonRealization
        rzs = [PoissonRealization.empty(cfg.T)] * n_paths
    n_steps = cfg.n_steps
    h = cfg.T / n_steps
    every = 1 if out_dt is None else max(1, int(round(out_dt / h)))
    out_idx = sorted(set(range(0, n_steps + 1, every)) | {n_steps})
    n_out = len(out_idx)
    t = np.empty(n_out)
    sq = np.empty((n_out, n_paths))
    V = np.empty((n_out, n_paths))
    Phi = np.empty((n_out, n_paths))
    pos = {k: i for i, k in enumerate(out_idx)}
    peak = [0.0]

    def observer(k, tk, a, b):
        i = pos[k]
        t[i] = tk
        y = stretch(a, mu)
        s = np.sum((mu * a) ** 2 + b ** 2, axis=1)
        Mv = nl.M(np.where(np.isfinite(y), y, 0.0))
        Mv = np.where(np.isfinite(y), Mv, np.nan)
        sq[i] = s
        V[i] = 0.5 * s + 0.5 * Mv
        Phi[i] = 0.5 * P.quadratic(a, b) + Mv
        if np.isfinite(s).any():
            peak[0] = max(peak[0], float(np.sqrt(np.nanmax(s))))

    def stop_value(a, b):
        y = stretch(a, mu)
        ok = np.isfinite(y)
        s = np.sum((mu * a) ** 2 + b ** 2, axis=1)
        return np.where(ok, 0.5 * s + 0.5 * nl.M(np.where(ok, y, 0.0)), np.inf)

    res = integrate_batch(a0, b0, rzs, spec, nu, cfg, observer, every,
                          levels=sorted(set(float(v) for v in levels) | {float(cfg.N_cap)}),
                          stop_value=stop_value)
    y0 = stretch(a0, mu)
    energy0 = np.sum((mu * a0) ** 2 + b0 ** 2, axis=1) + nl.M(y0)
    return EnsembleStats(t, n_paths, int(seed), float(lam), sq, V, Phi, energy0,
                         res.levels, res.tau, res.tau_value, res.exploded, res.step, peak[0])


# ------------------------------------------------------------------ checks

@dataclass
class CheckReport:
    """Outcome of one statistical check.

    ``status`` is one of ``pass``, ``fail``, ``skipped``, ``inapplicable``.
    ``points`` holds per-time rows with estimate, half-width, bound and
    margin (``bound - estimate``); ``worst`` is the row with the smallest
    margin.
    """

    name: str
    status: str
    reason: str = ""
    points: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.status in ("pass", "skipped", "inapplicable")

    @property
    def violated(self):
        return self.status == "fail"

    @property
    def worst(self):
        rows = [p for p in self.points if p.get("bound") is not None]
        return min(rows, key=lambda p: p["margin"]) if rows else None

    def to_dict(self):
        d = {"name": self.name, "status": self.status, "passed": self.passed,
             "reason": self.reason, "details": self.details, "worst": self.worst,
             "n_points": len(self.points)}
        return d


def _bound_rows(series, t, est, half, bound, level=None):
    rows = []
    ok = True
    for ti, e, hw, bd in zip(t, est, half, bound):
        slack = ROUND * max(1.0, abs(bd))
        good = bool(np.isfinite(e) and e <= bd + hw + slack and e <= 1.05 * bd + slack)
        ok &= good
        rows.append({"series": series, "level": level, "t": float(ti), "estimate": float(e),
                     "ci_lo": float(e - hw), "ci_hi": float(e + hw), "half_width": float(hw),
                     "bound": float(bd), "margin": float(bd - e), "ok": good})
    return rows, ok


def _degenerate(name, stats):
    if stats.degenerate:
        return CheckReport(name, "skipped", "degenerate: fewer than 2 paths, CI undefined")
    return None


def khasminskii_check(stats, spec, levels=None, nu=None, certify=True):
    """Moment and tail bounds of the nonexplosion estimate.

    Uses ``C = (1 + K_f + K_g) / 2`` from the declared constants and
    ``bound(t) = (1 + E V_0) e^{Ct} - 1``. For each monitored level ``n``
    checks ``E V(u(t ^ tau_n)) <= bound(t)`` and
    ``P(tau_n <= t) <= bound(t) / (n^2 / 2)``. With ``certify`` the declared
    constants are compared with empirical ones on the ball of the largest
    observed norm, and the tension term's ball-local growth is reported.
    """
    name = "khasminskii"
    deg = _degenerate(name, stats)
    if deg:
        return deg
    c = spec.constants
    if c.K_f is None or c.K_g is None:
        return CheckReport(name, "skipped", "K_f and K_g must be declared")
    C = khasminskii_rate(c.K_f, c.K_g)
    EV0 = float(stats.V[0].mean())
    bound = EV0 + (1.0 + EV0) * np.expm1(C * stats.t)
    levels = [lv for lv in stats.levels if lv < max(stats.levels)] if levels is None else levels
    rows = []
    ok = stats.explosion_count == 0
    for n in levels:
        m, _, h99 = _mean_ci(stats.stopped_V(n))
        r, good = _bound_rows("stopped_V", stats.t, m, h99, bound, n)
        rows += r
        ok &= good
        p = stats.tail(n)
        hp = Z99 * np.sqrt(p * (1 - p) / stats.n_paths)
        r, good = _bound_rows("tail", stats.t, p, hp, bound / (0.5 * n * n), n)
        rows += r
        ok &= good
    details = {"C": C, "EV0": EV0, "K_f": c.K_f, "K_g": c.K_g, "levels": list(levels),
               "explosions": stats.explosion_count}
    if certify and stats.max_norm > 0:
        rep = estimate_constants(spec, max(stats.max_norm, 1e-3), 2000, stats.seed, nu)
        details["certification"] = {
            "radius": rep.radius, "K_f_empirical": rep.K_f, "K_F_ball": rep.K_F_ball,
            "K_g_empirical": rep.K_g, "violations": rep.violations,
            "note": "K_F_ball includes the tension term, which is only locally bounded; "
                    "C uses the declared K_f of f alone",
        }
        if rep.violations:
            ok = False
    reason = "" if stats.explosion_count == 0 else f"{stats.explosion_count} exploded paths"
    return CheckReport(name, "pass" if ok else "fail", reason, rows, details)


def stability_check(stats, spec, P, nl, lam_factor=0.9, fit_window=None):
    """Exponential mean-square decay (``K = 0``) or uniform bound (``K > 0``).

    ``lambda* = lam_factor * lambda_window`` with ``R_g``, ``K`` taken from the
    declared constants. For ``K = 0`` checks
    ``E||u(t)||^2 <= (||P|| + 2) e^{-lambda* t} E calE(u_0)`` at every output
    time and requires the fitted decay rate to be at least ``lambda*``. For
    ``K > 0`` checks ``E||u(t)||^2 <= (||P|| + 2) E calE(u_0) + 2 K / lambda*``.
    """
    name = "stability"
    deg = _degenerate(name, stats)
    if deg:
        return deg
    c = spec.constants
    beta = spec.beta
    R_g = c.R_g or 0.0
    K = c.K or 0.0
    lw = lambda_window(beta, spec.basis.mu1, R_g, nl.alpha, P) if beta > 0 else 0.0
    details = {"beta": beta, "R_g": R_g, "K": K, "alpha": nl.alpha, "P_norm": P.norm,
               "lambda_window": lw}
    if lw <= 0:
        return CheckReport(name, "inapplicable", "theorem inapplicable: lambda window is empty",
                           details=details)
    lam = lam_factor * lw
    E0 = float(stats.energy0.mean())
    details.update({"lambda_star": lam, "E0": E0, "explosions": stats.explosion_count})
    m, _, h99 = stats.mean_sq_norm
    ok = stats.explosion_count == 0
    if K <= 0:
        bound = (P.norm + 2.0) * np.exp(-lam * stats.t) * E0
        rows, good = _bound_rows("mean_sq_norm", stats.t, m, h99, bound)
        ok &= good
        try:
            fit = decay_fit(stats.t, m, window=fit_window, per_path=stats.sq_norm, seed=stats.seed)
            details["fit"] = fit.to_dict()
            if fit.rate < lam:
                ok = False
                details["fit_failure"] = f"fitted rate {fit.rate:.5g} < lambda* {lam:.5g}"
        except FitRefused as exc:
            ok = False
            details["fit_failure"] = str(exc)
        details["branch"] = "K=0"
    else:
        sup_bound = (P.norm + 2.0) * E0 + 2.0 * K / lam
        rows, good = _bound_rows("mean_sq_norm", stats.t, m, h99, np.full(m.shape, sup_bound))
        ok &= good
        details.update({"branch": "K>0", "sup_bound": sup_bound, "sup_estimate": float(m.max())})
    return CheckReport(name, "pass" if ok else "fail", "", rows, details)


def supermartingale_check(stats, z_max=3.0):
    """Consecutive increments of ``E[Phi(u(t)) e^{lam t}]`` must not be significant.

    For each pair of neighbouring output times the per-path increment is
    averaged; its z-score is ``mean / (sd / sqrt(P))``. A deterministic
    ensemble (zero spread) passes only if the increment is non-positive up to
    rounding.
    """
    name = "supermartingale"
    deg = _degenerate(name, stats)
    if deg:
        return deg
    Y = stats.phi_exp
    d = np.diff(Y, axis=0)
    m = d.mean(axis=1)
    sd = d.std(axis=1, ddof=1)
    scale = ROUND * np.maximum(1.0, np.abs(Y[:-1]).mean(axis=1))
    z = np.where(sd > 0, m / np.where(sd > 0, sd, 1.0) * math.sqrt(stats.n_paths),
                 np.where(m > scale, np.inf, 0.0))
    rows = [{"series": "phi_exp_increment", "level": None, "t": float(t1), "estimate": float(mi),
             "z": float(zi), "ok": bool(zi <= z_max)} for t1, mi, zi in zip(stats.t[1:], m, z)]
    worst = float(np.max(z)) if z.size else 0.0
    ok = bool(worst <= z_max) and stats.explosion_count == 0
    mean_curve, _, h99 = stats.mean_Phi_exp
    details = {"lambda": stats.lam, "max_z": worst, "z_max": z_max,
               "t_max_z": float(stats.t[1:][np.argmax(z)]) if z.size else None,
               "curve": mean_curve.tolist(), "ci99": h99.tolist()}
    return CheckReport(name, "pass" if ok else "fail", "", rows, details)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    r2: float
    ci_lo: float = float("nan")
    ci_hi: float = float("nan")

    def to_dict(self):
        return {"rate": self.rate, "intercept": self.intercept, "r2": self.r2,
                "ci95": [self.ci_lo, self.ci_hi]}


def _loglin(t, y):
    logy = np.log(y)
    X = np.column_stack([np.ones_like(t), t])
    coef, *_ = np.linalg.lstsq(X, logy, rcond=None)
    resid = logy - X @ coef
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return -float(coef[1]), float(coef[0]), r2


def decay_fit(t, values, window=None, per_path=None, n_boot=200, seed=0):
    """Least-squares fit of ``log(values) = intercept - rate * t``.

    ``window`` restricts the fit to ``window[0] <= t <= window[1]``. With
    ``per_path`` (shape ``(n_t, P)``) a 95% percentile interval for the rate
    is obtained from ``n_boot`` resamples of the paths.

    Raises
    ------
    FitRefused
        If any fitted value is not positive or fewer than two points remain.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(values, dtype=float)
    sel = np.ones(t.shape, dtype=bool)
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
    if sel.sum() < 2:
        raise FitRefused("fewer than two points in the fit window")
    if not np.all(np.isfinite(y[sel])) or np.any(y[sel] <= 0):
        raise FitRefused("curve has non-positive or non-finite values in the fit window")
    rate, icpt, r2 = _loglin(t[sel], y[sel])
    lo = hi = float("nan")
    if per_path is not None and np.shape(per_path)[1] >= 2:
        data = np.asarray(per_path, dtype=float)[sel]
        rng = np.random.default_rng(seed)
        n = data.shape[1]
        rates = []
        for _ in range(n_boot):
            idx = rng.integers(0, n, n)
            curve = data[:, idx].mean(axis=1)
            if np.all(curve > 0) and np.all(np.isfinite(curve)):
                rates.append(_loglin(t[sel], curve)[0])
        if rates:
            lo, hi = (float(v) for v in np.percentile(rates, [2.5, 97.5]))
    return DecayFit(rate, icpt, r2, lo, hi)


def combine_levels(name, reports):
    """Merge reports of the same check run at several step sizes.

    Passes only if every level passes.
    """
    statuses = [r.status for r in reports]
    if "fail" in statuses:
        status = "fail"
    elif all(s == "pass" for s in statuses):
        status = "pass"
    else:
        status = statuses[0]
    points = []
    for i, r in enumerate(reports):
        for p in r.points:
            q = dict(p)
            q["dt_level"] = i
            points.append(q)
    details = {"levels": [dict(r.details, status=r.status, reason=r.reason) for r in reports]}
    reason = "; ".join(r.reason for r in reports if r.reason)
    return CheckReport(name, status, reason, points, details)


# ------------------------------------------------------------------ output

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def report_dict(checks, meta):
    checks = list(checks)
    return _clean({
        "meta": meta,
        "passed": all(c.passed for c in checks),
        "checks": [c.to_dict() for c in checks],
    })


def write_report(path, checks, meta):
    with open(path, "w") as fh:
        json.dump(report_dict(checks, meta), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(v):
    return "" if v is None else repr(float(v))


def write_curves(path, checks, header=None):
    """One CSV row per check point: ``check, series, level, t, estimate, ci_lo, ci_hi, bound``."""
    buf = io.StringIO()
    for k, v in sorted((header or {}).items()):
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check", "series", "level", "dt_level", "t", "estimate", "ci_lo", "ci_hi",
                "bound"])
    for c in checks:
        for p in c.points:
            w.writerow([c.name, p.get("series"), _fmt(p.get("level")), p.get("dt_level", 0),
                        _fmt(p["t"]), _fmt(p["estimate"]), _fmt(p.get("ci_lo")),
                        _fmt(p.get("ci_hi")), _fmt(p.get("bound"))])
    with open(path, "w") as fh:
        fh.write(buf.getvalue())
