import math

import numpy as np
import pytest

from beamjump.coefficients import DeclaredConstants, LinearDamping, ModelSpec, SeparableJump
from beamjump.ensemble_harness import (CheckReport, InitialCondition, _bound_rows,
                                       combine_levels, decay_fit, khasminskii_check,
                                       run_ensemble, stability_check, supermartingale_check,
                                       write_curves, write_report)
from beamjump.errors import FitRefused
from beamjump.jump_noise import FiniteAtoms
from beamjump.lyapunov import NonlinearityM, POperator, lambda_window
from beamjump.pathwise_solver import SolverConfig
from beamjump.spectral_core import build_hinged_basis

PI4 = math.pi ** 4
B4 = build_hinged_basis(1.0, 4)


def u0(a=(), b=(), spread=0.0):
    return InitialCondition(np.array(a, float), np.array(b, float), spread)


# ---------------------------------------------------------------- run_ensemble


def test_zero_model_constant_norm():
    st = run_ensemble(ModelSpec(B4), None, u0([1.0]), SolverConfig(0.01, 1.0), 5, 0, 0.1)
    m, h95, h99 = st.mean_sq_norm
    np.testing.assert_allclose(m, PI4, rtol=1e-13)
    assert np.all(h95 == 0) and np.all(h99 == 0)
    assert st.t.size == 11 and st.t[-1] == 1.0


def test_isometry_growth():
    lam, c, T = 2.0, 0.7, 1.0
    spec = ModelSpec(B4, jump=SeparableJump(c * np.eye(4)[0]))
    nu = FiniteAtoms([1.0], [lam])
    x0 = u0([0.01], [0.5])
    st = run_ensemble(spec, nu, x0, SolverConfig(1e-3, T), 10_000, 3, 0.25)
    m, _, h99 = st.mean_sq_norm
    norm0 = (B4.mu[0] * 0.01) ** 2 + 0.25
    exact = norm0 + st.t * lam * c ** 2
    assert np.all(np.abs(m - exact) <= h99 + 1e-12 * exact)


def test_compensated_contribution_mean_zero():
    spec = ModelSpec(B4, jump=SeparableJump(np.array([1.0, 0.5, 0, 0])))
    nu = FiniteAtoms([1.0], [3.0])
    got = {}

    st = run_ensemble(spec, nu, u0(), SolverConfig(1e-3, 1.0), 4000, 9, 0.5)
    # the norm does not carry sign information; re-run the batch for the mean state
    from beamjump.jump_noise import sample_realization
    from beamjump.pathwise_solver import integrate_batch

    rzs = [sample_realization(nu, 1.0, 9, p) for p in range(4000)]

    def obs(k, t, a, b):
        got["a"], got["b"] = a.copy(), b.copy()

    integrate_batch(np.zeros((4000, 4)), np.zeros((4000, 4)), rzs, spec, nu,
                    SolverConfig(1e-3, 1.0), obs)
    for arr in (got["a"] * B4.mu, got["b"]):
        se = arr.std(axis=0, ddof=1) / math.sqrt(4000)
        assert np.all(np.abs(arr.mean(axis=0)) <= 3 * se + 1e-15)
    assert st.explosion_count == 0


def test_same_seed_identical(tmp_path):
    spec = ModelSpec(B4, drift=LinearDamping(0.3), jump=SeparableJump(np.eye(4)[0]),
                     constants=DeclaredConstants(K_f=1.0, K_g=1.0))
    nu = FiniteAtoms.symmetric(1.0, 1.0)
    files = []
    for k in range(2):
        st = run_ensemble(spec, nu, u0([0.1], spread=0.05), SolverConfig(0.01, 1.0), 50, 4, 0.1,
                          levels=(1.0, 2.0))
        rep = khasminskii_check(st, spec, [1.0, 2.0], nu)
        write_report(tmp_path / f"r{k}.json", [rep], {"seed": 4})
        write_curves(tmp_path / f"c{k}.csv", [rep], {"seed": 4})
        files.append(((tmp_path / f"r{k}.json").read_bytes(), (tmp_path / f"c{k}.csv").read_bytes()))
    assert files[0] == files[1]
    other = run_ensemble(spec, nu, u0([0.1], spread=0.05), SolverConfig(0.01, 1.0), 50, 5, 0.1)
    assert not np.array_equal(other.sq_norm, st.sq_norm)


def test_path_results_independent_of_ensemble_size():
    spec = ModelSpec(B4, jump=SeparableJump(np.eye(4)[0]))
    nu = FiniteAtoms.symmetric(1.0, 2.0)
    small = run_ensemble(spec, nu, u0([0.1], spread=0.1), SolverConfig(0.01, 1.0), 10, 1)
    big = run_ensemble(spec, nu, u0([0.1], spread=0.1), SolverConfig(0.01, 1.0), 30, 1)
    np.testing.assert_array_equal(small.sq_norm, big.sq_norm[:, :10])


def test_ci_shrinks_with_paths():
    spec = ModelSpec(B4, jump=SeparableJump(np.eye(4)[0]))
    nu = FiniteAtoms.symmetric(1.0, 2.0)
    widths = []
    for n in (400, 1600):
        st = run_ensemble(spec, nu, u0([0.05]), SolverConfig(0.02, 1.0), n, 2, 0.5)
        widths.append(st.mean_sq_norm[2][-1])
    assert widths[0] / widths[1] == pytest.approx(2.0, rel=0.2)


def test_tails_monotone():
    spec = ModelSpec(B4, jump=SeparableJump(np.eye(4)[0]))
    nu = FiniteAtoms.symmetric(2.0, 3.0)
    st = run_ensemble(spec, nu, u0(), SolverConfig(0.01, 2.0), 500, 0, 0.1, levels=(1, 2, 4))
    tails = np.array([st.tail(n) for n in (1.0, 2.0, 4.0)])
    assert np.all(np.diff(tails, axis=1) >= 0)
    assert np.all(np.diff(tails, axis=0) <= 0)
    assert tails[0, -1] > 0


# ---------------------------------------------------------------- checks


def test_bound_rule_never_passes_on_width_alone():
    _, ok = _bound_rows("s", [0.0], [1.2], [0.5], [1.0])
    assert not ok
    _, ok = _bound_rows("s", [0.0], [1.04], [0.05], [1.0])
    assert ok
    _, ok = _bound_rows("s", [0.0], [1.04], [0.01], [1.0])
    assert not ok


def test_khasminskii_constant_and_zero_model():
    spec = ModelSpec(B4, constants=DeclaredConstants(K_f=1.0, K_g=1.0))
    st = run_ensemble(spec, None, u0([0.1], [0.2]), SolverConfig(0.05, 2.0), 3, 0, 0.1,
                      levels=(4, 8, 16))
    rep = khasminskii_check(st, spec, [4.0, 8.0, 16.0])
    assert rep.details["C"] == 1.5
    assert rep.status == "pass"
    for n in (4.0, 8.0, 16.0):
        assert np.all(st.tail(n) == 0)
    np.testing.assert_allclose(st.mean_V[0], st.mean_V[0][0], rtol=1e-12)


def test_khasminskii_needs_declared_constants():
    st = run_ensemble(ModelSpec(B4), None, u0([0.1]), SolverConfig(0.1, 1.0), 2, 0)
    assert khasminskii_check(st, ModelSpec(B4)).status == "skipped"


def test_khasminskii_flags_violation():
    # with K_f = K_g = 0 the declared bound is too small for noise of size 3
    spec = ModelSpec(B4, jump=SeparableJump(np.eye(4)[0]),
                     constants=DeclaredConstants(K_f=0.0, K_g=0.0))
    nu = FiniteAtoms.symmetric(3.0, 5.0)
    st = run_ensemble(spec, nu, u0(), SolverConfig(0.01, 2.0), 300, 0, 0.1, levels=(4,))
    rep = khasminskii_check(st, spec, [4.0], nu)
    assert rep.violated and rep.worst["margin"] < 0


def test_stability_noise_free_decay():
    beta = 0.2
    spec = ModelSpec(B4, nl=NonlinearityM.affine(b=1.0), drift=LinearDamping(beta),
                     constants=DeclaredConstants(R_g=0.0, K=0.0))
    P = POperator(beta, B4)
    st = run_ensemble(spec, None, u0([0.3, 0.1]), SolverConfig(1e-3, 10.0), 2, 0, 0.1)
    rep = stability_check(st, spec, P, spec.nl)
    lw = lambda_window(beta, B4.mu1, 0.0, 1.0, P)
    assert rep.status == "pass"
    assert rep.details["lambda_star"] == pytest.approx(0.9 * lw)
    assert rep.details["fit"]["rate"] >= 0.9 * lw


def test_stability_supermartingale_deterministic_path():
    beta = 0.2
    spec = ModelSpec(B4, nl=NonlinearityM.affine(b=1.0), drift=LinearDamping(beta))
    P = POperator(beta, B4)
    lw = lambda_window(beta, B4.mu1, 0.0, 1.0, P)
    st = run_ensemble(spec, None, u0([0.3, 0.1]), SolverConfig(1e-3, 10.0), 2, 0, 0.1, lam=lw)
    assert supermartingale_check(st).status == "pass"
    assert np.all(np.diff(st.phi_exp[:, 0]) <= 1e-12 * st.phi_exp[0, 0])
    fast = run_ensemble(spec, None, u0([0.3, 0.1]), SolverConfig(1e-3, 2.0), 2, 0, 0.1, lam=2.0)
    rep = supermartingale_check(fast)
    assert rep.violated and math.isinf(rep.details["max_z"])


def test_supermartingale_zero_state():
    st = run_ensemble(ModelSpec(B4), None, u0(), SolverConfig(0.1, 1.0), 2, 0, lam=1.0)
    assert supermartingale_check(st).status == "pass"


def test_stability_K_positive_plug_in():
    beta, K = 0.2, 0.25
    spec = ModelSpec(B4, nl=NonlinearityM.affine(b=1.0), drift=LinearDamping(beta),
                     jump=SeparableJump(np.eye(4)[0]), constants=DeclaredConstants(R_g=0.0, K=K))
    nu = FiniteAtoms.symmetric(0.5, 1.0)
    P = POperator(beta, B4)
    st = run_ensemble(spec, nu, u0([0.3, 0.1]), SolverConfig(0.01, 5.0), 200, 0, 0.1)
    rep = stability_check(st, spec, P, spec.nl)
    lam = 0.9 * lambda_window(beta, B4.mu1, 0.0, 1.0, P)
    E0 = float(st.energy0.mean())
    assert rep.details["sup_bound"] == pytest.approx((P.norm + 2) * E0 + 2 * K / lam, rel=1e-14)
    assert rep.status == "pass"


def test_stability_inapplicable():
    beta = 1.0
    spec = ModelSpec(B4, drift=LinearDamping(beta), constants=DeclaredConstants(R_g=0.0, K=0.0))
    st = run_ensemble(spec, None, u0([0.1]), SolverConfig(0.1, 1.0), 2, 0)
    rep = stability_check(st, spec, POperator(beta, B4), spec.nl)
    assert rep.status == "inapplicable" and rep.points == []
    assert "inapplicable" in rep.reason


def test_degenerate_ensemble_skips():
    spec = ModelSpec(B4, drift=LinearDamping(0.2), constants=DeclaredConstants(K_f=1, K_g=1))
    st = run_ensemble(spec, None, u0([0.1]), SolverConfig(0.1, 1.0), 1, 0)
    assert st.degenerate and np.all(np.isnan(st.mean_sq_norm[2]))
    for rep in (khasminskii_check(st, spec), supermartingale_check(st),
                stability_check(st, spec, POperator(0.2, B4), spec.nl)):
        assert rep.status == "skipped" and "degenerate" in rep.reason


# ---------------------------------------------------------------- decay fit


def test_decay_fit_exact():
    t = np.linspace(0, 5, 51)
    fit = decay_fit(t, 3.0 * np.exp(-2.0 * t))
    assert abs(fit.rate - 2.0) <= 1e-9
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0))


def test_decay_fit_constant():
    fit = decay_fit(np.linspace(0, 1, 11), np.full(11, 4.0))
    assert abs(fit.rate) <= 1e-12


def test_decay_fit_refusals():
    with pytest.raises(FitRefused):
        decay_fit([0, 1, 2], [1.0, 0.0, 0.5])
    with pytest.raises(FitRefused):
        decay_fit([0, 1, 2], [1.0, -1.0, 0.5])
    with pytest.raises(FitRefused):
        decay_fit([0, 1, 2], [1.0, 0.5, 0.2], window=(1.5, 3))


def test_decay_fit_bootstrap_interval():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 4, 41)
    paths = np.exp(-1.0 * t)[:, None] * rng.lognormal(0, 0.3, (1, 300))
    fit = decay_fit(t, paths.mean(axis=1), per_path=paths, seed=1)
    # every path decays at rate 1, so the bootstrap interval collapses onto it
    assert fit.ci_lo == pytest.approx(1.0, abs=1e-9) and fit.ci_hi == pytest.approx(1.0, abs=1e-9)
    noisy = paths * rng.lognormal(0, 0.2, paths.shape)
    fit = decay_fit(t, noisy.mean(axis=1), per_path=noisy, seed=1)
    assert fit.ci_lo < fit.rate < fit.ci_hi


def test_combine_levels():
    a = CheckReport("x", "pass", points=[{"t": 0.0, "estimate": 1.0, "bound": 2.0, "margin": 1.0}])
    b = CheckReport("x", "fail", "bad", points=[{"t": 0.0, "estimate": 3.0, "bound": 2.0,
                                                 "margin": -1.0}])
    both = combine_levels("x", [a, b])
    assert both.status == "fail" and both.worst["dt_level"] == 1
    assert combine_levels("x", [a, a]).status == "pass"
