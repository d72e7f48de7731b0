"""
Deterministic verification suites used by the ``verify`` and
``picard-compare`` commands.

Each suite returns a :class:`~beamjump.ensemble_harness.CheckReport`.
"""
from __future__ import annotations

import math

import numpy as np

from .coefficients import eval_F
from .ensemble_harness import CheckReport
from .errors import PicardError
from .jump_noise import PoissonRealization, isometry_estimate, sample_realization
from .lyapunov import POperator, apply_P, p_identity_drift, v_gradient
from .pathwise_solver import (SolverConfig, convolution_identity_check, integrate_path,
                              measured_ratio, picard_solve)
from .spectral_core import SpectralState, group_apply, h_inner, h_norm

__all__ = ["random_states", "identity_suite", "conservation_check", "convolution_suite",
           "isometry_check", "picard_compare"]


def random_states(basis, n, rng):
    """States with Gaussian orthonormal coordinates and log-uniform scale."""
    mu = basis.mu
    out = []
    for _ in range(n):
        z = rng.standard_normal(2 * basis.n_modes) * 10.0 ** rng.uniform(-2, 1)
        out.append(SpectralState(z[: mu.size] / mu, z[mu.size:], basis))
    return out


def _rel(lhs, rhs, scale):
    return abs(lhs - rhs) / max(scale, 1e-300)


def identity_suite(spec, n=1000, seed=0, tol=1e-10):
    """Operator identities on ``n`` random states.

    Covers: the two-sided bound ``||x||^2 <= <Px, x> <= ||P|| ||x||^2``; the
    closed form of ``<Acal x, P x>``; ``<(0, -beta x2), P x> = -beta^2 <x1, x2>
    - 2 beta ||x2||^2``; ``<DV(x), Acal x + F(x)> = -<x2, f(x)>``; and
    unitarity, group law and inverse of ``exp(t Acal)``.
    """
    basis = spec.basis
    mu = basis.mu
    rng = np.random.default_rng(seed)
    beta = spec.beta if spec.beta > 0 else 0.37
    P = POperator(beta, basis)
    worst = {k: 0.0 for k in ("P_lower", "P_upper", "P_drift", "P_damping", "DV_identity",
                              "unitarity", "group_law", "inverse")}
    for x in random_states(basis, n, rng):
        nx2 = h_norm(x) ** 2
        pxx = h_inner(apply_P(x, P), x)
        worst["P_lower"] = max(worst["P_lower"], (nx2 - pxx) / nx2)
        worst["P_upper"] = max(worst["P_upper"], (pxx - P.norm * nx2) / (P.norm * nx2))
        # closed form against direct evaluation (raises on violation)
        direct = p_identity_drift(x, P, rtol=np.inf)
        terms = [-beta * np.sum((mu * x.a) ** 2), beta ** 2 * np.dot(x.a, x.b),
                 beta * np.sum(x.b ** 2)]
        worst["P_drift"] = max(worst["P_drift"],
                               _rel(direct, sum(terms), sum(abs(v) for v in terms) + nx2))
        damp = SpectralState(np.zeros_like(x.a), -beta * x.b, basis)
        lhs = h_inner(damp, apply_P(x, P))
        terms = [-beta ** 2 * np.dot(x.a, x.b), -2.0 * beta * np.sum(x.b ** 2)]
        worst["P_damping"] = max(worst["P_damping"],
                                 _rel(lhs, sum(terms), sum(abs(v) for v in terms) + beta * nx2))
        gen = SpectralState(x.b, -mu ** 2 * x.a, basis)
        rhs_state = gen + eval_F(0.0, x, spec)
        dv = v_gradient(x, spec.nl)
        lhs = h_inner(dv, rhs_state)
        f = spec.drift.velocity(0.0, x.a[None, :], x.b[None, :])[0]
        rhs = -float(np.dot(x.b, f))
        scale = (np.sum(np.abs(mu ** 2 * dv.a * gen.a)) + np.sum(np.abs(dv.b * rhs_state.b))
                 + abs(rhs))
        worst["DV_identity"] = max(worst["DV_identity"], _rel(lhs, rhs, scale))
        t, s = rng.uniform(-50, 50, 2)
        gx = group_apply(x, t)
        worst["unitarity"] = max(worst["unitarity"], abs(h_norm(gx) / math.sqrt(nx2) - 1.0))
        two = group_apply(group_apply(x, s), t)
        one = group_apply(x, s + t)
        sc = math.sqrt(nx2)
        worst["group_law"] = max(worst["group_law"], h_norm(two - one) / sc)
        worst["inverse"] = max(worst["inverse"], h_norm(group_apply(gx, -t) - x) / sc)
    ok = all(v <= tol for v in worst.values())
    rows = [{"series": k, "level": None, "t": 0.0, "estimate": float(v), "bound": tol,
             "margin": tol - float(v), "ok": v <= tol} for k, v in worst.items()]
    return CheckReport("identities", "pass" if ok else "fail", "", rows,
                       {"n_states": n, "n_modes": basis.n_modes, "beta": beta, "tol": tol,
                        "P_norm": P.norm, **worst})


def conservation_check(spec, u0, cfg, tol=1e-6):
    """Relative drift of ``V`` along the noise-free path (meaningful for ``f = 0``)."""
    tr = integrate_path(u0, PoissonRealization.empty(cfg.T), spec, None, cfg)
    V = tr.v_values(spec.nl)
    drift = float(np.max(np.abs(V / V[0] - 1.0))) if V[0] > 0 else float(np.max(np.abs(V)))
    ok = drift <= tol and not tr.exploded
    return CheckReport("conservation", "pass" if ok else "fail", "", [
        {"series": "V_drift", "level": None, "t": float(cfg.T), "estimate": drift,
         "bound": tol, "margin": tol - drift, "ok": ok}],
        {"max_rel_drift": drift, "per_dt": drift / cfg.dt_max, "dt": cfg.dt_max, "T": cfg.T})


def convolution_suite(spec, nu, T, n_pairs=100, seed=0, dt=0.01, tol=1e-10):
    """Stopped-convolution identity over random ``(tau, t)`` pairs."""
    rng = np.random.default_rng(seed)
    basis = spec.basis
    worst = 0.0
    n_paths = 10
    rzs = [sample_realization(nu, T, seed, p) for p in range(n_paths)]
    states = random_states(basis, n_paths, rng)
    for i in range(n_pairs):
        k = i % n_paths
        tau, t = rng.uniform(0, T, 2)
        if i % 10 == 0 and rzs[k].n_jumps:
            tau = float(rng.choice(rzs[k].times))   # stop exactly at a jump
        r = convolution_identity_check(rzs[k], spec.jump, tau, t, nu, states[k], dt)
        worst = max(worst, r)
    ok = worst <= tol
    return CheckReport("convolution_identity", "pass" if ok else "fail", "", [
        {"series": "residual", "level": None, "t": float(T), "estimate": worst, "bound": tol,
         "margin": tol - worst, "ok": ok}], {"n_pairs": n_pairs, "max_residual": worst})


def isometry_check(spec, nu, x, T, n_samples, seed, rel_width=0.02):
    """Monte Carlo isometry: ``|lhs - rhs| <= ci`` and ``ci <= rel_width * rhs``."""
    r = isometry_estimate(spec.jump, x, nu, T, n_samples, seed)
    if r.rhs == 0:
        ok = r.lhs == 0
    else:
        ok = r.within_ci and r.ci <= rel_width * r.rhs
    return CheckReport("isometry", "pass" if ok else "fail", "", [
        {"series": "isometry", "level": None, "t": float(T), "estimate": r.lhs,
         "ci_lo": r.lhs - r.ci, "ci_hi": r.lhs + r.ci, "bound": r.rhs,
         "margin": r.rhs - r.lhs, "ok": ok}],
        {"lhs": r.lhs, "rhs": r.rhs, "ci99": r.ci, "n_samples": n_samples,
         "rel_half_width": r.ci / r.rhs if r.rhs else 0.0})


def picard_compare(spec, nu, u0, cfg, dt_grid, seed, min_order=0.8, ratio_slack=0.1):
    """Stepper vs Picard on one frozen realization for each step in ``dt_grid``.

    Returns a report with per-step rows ``dt, gap, iterations, measured ratio``
    and observed orders ``log2(gap_i / gap_{i+1}) / log2(dt_i / dt_{i+1})``.
    :class:`PicardError` propagates.
    """
    rz = sample_realization(nu, cfg.T, seed, 0) if nu is not None \
        else PoissonRealization.empty(cfg.T)
    mu = spec.basis.mu
    rows = []
    gaps = []
    ratios_ok = True
    factor = None
    for dt in dt_grid:
        c = SolverConfig(dt, cfg.T, cfg.N_cap, cfg.picard)
        pt = picard_solve(u0, rz, spec, nu, c)
        st = integrate_path(u0, rz, spec, nu, c)
        gap = float(np.max(np.sqrt(np.sum((mu * (pt.a - st.a)) ** 2 + (pt.b - st.b) ** 2,
                                          axis=1))))
        ratio = measured_ratio(pt.residuals, 1e3 * cfg.picard.tol)
        factor = pt.factor
        good_ratio = factor > 0.5 or ratio <= factor + ratio_slack
        ratios_ok &= good_ratio
        gaps.append(gap)
        rows.append({"series": "picard", "level": None, "t": float(dt), "estimate": gap,
                     "dt": float(dt), "gap": gap, "iterations": pt.iterations,
                     "measured_ratio": ratio, "factor": factor, "ok": good_ratio})
    orders = []
    for i in range(len(gaps) - 1):
        if gaps[i] <= 1e-12 and gaps[i + 1] <= 1e-12:
            orders.append(None)
        else:
            orders.append(math.log(gaps[i] / max(gaps[i + 1], 1e-300))
                          / math.log(dt_grid[i] / dt_grid[i + 1]))
    for row, od in zip(rows[1:], orders):
        row["order"] = od
    order_ok = all(o is None or o >= min_order for o in orders)
    ok = order_ok and ratios_ok
    return CheckReport("picard_compare", "pass" if ok else "fail", "", rows,
                       {"orders": orders, "gaps": gaps, "factor": factor, "n_jumps": rz.n_jumps,
                        "min_order": min_order})
