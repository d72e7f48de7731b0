import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from beamjump.coefficients import (DeclaredConstants, LinearDamping, ModelSpec,
                                   PointwiseCoefficient, ResolutionWarning, SeparableJump,
                                   ZeroJump, estimate_constants, eval_F, eval_G, lift_pointwise,
                                   retract, tension_lipschitz_bound, truncate_drift)
from beamjump.errors import CoefficientError
from beamjump.jump_noise import FiniteAtoms
from beamjump.lyapunov import NonlinearityM
from beamjump.spectral_core import build_hinged_basis, h_norm

PI4 = math.pi ** 4
B4 = build_hinged_basis(1.0, 4)
B256 = build_hinged_basis(1.0, 8, 256)


def vel(fn):
    return PointwiseCoefficient(lambda t, xi, u, ut, ux: fn(t, xi, u, ut, ux))


# ---------------------------------------------------------------- F, G


def test_eval_F_examples():
    assert np.all(eval_F(0.0, B4.state([1, 2, 3, 4], [1, 1, 1, 1]), ModelSpec(B4)).b == 0)
    spec = ModelSpec(B4, drift=LinearDamping(2.0))
    F = eval_F(0.0, B4.state(np.zeros(4), [1, 0, 0, 0]), spec)
    np.testing.assert_array_equal(F.a, 0.0)
    np.testing.assert_allclose(F.b, [-2, 0, 0, 0])
    spec = ModelSpec(B4, nl=NonlinearityM.affine(b=1.0))
    F = eval_F(0.0, B4.state([1, 0, 0, 0], np.zeros(4)), spec)
    assert F.b[0] == pytest.approx(-PI4, rel=1e-14)
    np.testing.assert_array_equal(F.b[1:], 0.0)


def test_eval_G_examples():
    x = B4.state([0.1, 0, 0, 0], [0, 0.3, 0, 0])
    assert np.all(eval_G(0.0, x, 1.0, ModelSpec(B4)).b == 0)
    spec = ModelSpec(B4, jump=SeparableJump(np.eye(4)[0]))
    G = eval_G(0.0, x, 0.5, spec)
    np.testing.assert_array_equal(G.a, 0.0)
    np.testing.assert_array_equal(G.b, [0.5, 0, 0, 0])


def test_eval_G_pointwise_affine_in_velocity():
    c = 0.7
    coef = PointwiseCoefficient(lambda t, xi, u, ut, ux, z: c * (1 + ut), has_mark=True)
    # a constant does not vanish at the hinges, so the projection is only O(h^2)
    with pytest.warns(ResolutionWarning):
        spec = ModelSpec(B256, jump=lift_pointwise(coef, B256))
    G = eval_G(0.0, B256.state(np.zeros(8), np.eye(8)[0]), 1.0, spec)
    # trapezoid projection oracle on the same 256-interval grid
    xi = np.linspace(0.0, 1.0, 257)
    modes = np.sqrt(2) * np.sin(np.outer(np.arange(1, 9), np.pi * xi))
    trap = integrate.trapezoid(c * modes, xi, axis=1)
    trap[0] += c
    np.testing.assert_allclose(G.b, trap, atol=1e-12)
    # exact integrals differ only by the O(h^2) quadrature error
    exact = np.array([c * math.sqrt(2) * (1 - (-1) ** k) / (k * math.pi) for k in range(1, 9)])
    exact[0] += c
    np.testing.assert_allclose(G.b, exact, atol=1e-4)


def test_nonfinite_pointwise_raises_with_location():
    coef = vel(lambda t, xi, u, ut, ux: 1.0 / np.where(xi > 0.5, 0.0, 1.0))
    spec = ModelSpec(B4, drift=lift_pointwise(coef, B4, check=False))
    with np.errstate(divide="ignore"), pytest.raises(CoefficientError, match="xi="):
        eval_F(0.0, B4.unit(1), spec)


# ---------------------------------------------------------------- lift


def test_lift_velocity_is_identity():
    lift = lift_pointwise(vel(lambda t, xi, u, ut, ux: ut), B256)
    b = np.random.default_rng(0).standard_normal(8)
    np.testing.assert_allclose(lift.velocity(0.0, np.zeros(8), b)[0], b, atol=1e-12)


def test_lift_displacement_on_eigenfunction():
    lift = lift_pointwise(vel(lambda t, xi, u, ut, ux: u), B256)
    np.testing.assert_allclose(lift.velocity(0.0, np.eye(8)[0], np.zeros(8))[0], np.eye(8)[0],
                               atol=1e-12)


def test_lift_product_coefficient():
    lift = lift_pointwise(vel(lambda t, xi, u, ut, ux: u * ut), B256, check=False)
    out = lift.velocity(0.0, np.eye(8)[0], np.eye(8)[0])[0]
    oracle = integrate.quad(lambda s: 2 * math.sin(math.pi * s) ** 2 * math.sqrt(2)
                            * math.sin(math.pi * s), 0, 1)[0]
    assert oracle == pytest.approx(8 * math.sqrt(2) / (3 * math.pi), rel=1e-12)
    assert out[0] == pytest.approx(oracle, abs=1e-6)
    assert out[0] == pytest.approx(1.2004, abs=1e-4)


def test_lift_linearity():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((3, 8)) * 0.1, rng.standard_normal((3, 8))
    c1 = vel(lambda t, xi, u, ut, ux: np.sin(u) + ut ** 2)
    c2 = vel(lambda t, xi, u, ut, ux: ux * xi)
    alpha = -1.7
    combo = lift_pointwise(c1.scaled(alpha) + c2, B256, check=False).velocity(0.0, a, b)
    parts = (alpha * lift_pointwise(c1, B256, check=False).velocity(0.0, a, b)
             + lift_pointwise(c2, B256, check=False).velocity(0.0, a, b))
    np.testing.assert_allclose(combo, parts, rtol=0, atol=1e-12 * np.abs(parts).max())


def test_lift_resolution_warning():
    coarse = build_hinged_basis(1.0, 4, 8)
    with pytest.warns(ResolutionWarning):
        lift_pointwise(vel(lambda t, xi, u, ut, ux: np.abs(ut) ** 0.5), coarse)
    with warnings.catch_warnings():
        warnings.simplefilter("error", ResolutionWarning)
        lift_pointwise(vel(lambda t, xi, u, ut, ux: ut), coarse)


def test_verify_growth():
    assert vel(lambda t, xi, u, ut, ux: 0.5 * ut).verify_growth() <= 0.25
    nu = FiniteAtoms([-1.0, 1.0], [0.5, 0.5])
    jump = PointwiseCoefficient(lambda t, xi, u, ut, ux, z: z * ut, has_mark=True)
    assert jump.verify_growth(nu) <= 1.0 + 1e-12


# ---------------------------------------------------------------- truncation


def test_truncation_exact_inside_and_radial_outside():
    spec = ModelSpec(B4, nl=NonlinearityM.affine(0.2, 1.0), drift=LinearDamping(0.3))
    tr = truncate_drift(spec, 2.0)
    rng = np.random.default_rng(2)
    for _ in range(100):
        z = rng.standard_normal(8)
        z *= rng.uniform(0, 4) / np.linalg.norm(z)
        x = B4.state(z[:4] / B4.mu, z[4:])
        n = h_norm(x)
        if n <= 2.0:
            np.testing.assert_array_equal(eval_F(0.0, x, tr).b, eval_F(0.0, x, spec).b)
        else:
            y = (2.0 / n) * x
            np.testing.assert_allclose(eval_F(0.0, x, tr).b, eval_F(0.0, y, spec).b,
                                       rtol=1e-13, atol=1e-13)
    with pytest.raises(ValueError):
        truncate_drift(spec, 0.0)


def test_retraction_identity_map():
    x = B4.state([2 / B4.mu[0], 0, 0, 0], [0, 0, 0, 0])  # norm 2
    a, b = retract(x.a, x.b, B4.mu, 1.0)
    np.testing.assert_allclose(a[0], x.a / 2, rtol=1e-15)
    a2, b2 = retract(a, b, B4.mu, 1.0)
    np.testing.assert_array_equal(a2, a)


def test_truncated_tension_global_lipschitz():
    R = 5.0
    spec = ModelSpec(B4, nl=NonlinearityM.affine(b=1.0))
    L5 = estimate_constants(spec, R, n_probes=10_000, seed=0).L_R
    assert L5 <= tension_lipschitz_bound(spec.nl, R, B4.mu1)
    tr = truncate_drift(spec, R)
    rng = np.random.default_rng(3)
    n = 10_000
    x = rng.standard_normal((n, 8))
    x *= (rng.uniform(0, 10 * R, (n, 1)) / np.linalg.norm(x, axis=1, keepdims=True))
    y = x + rng.standard_normal((n, 8)) * rng.uniform(1e-3, 5, (n, 1))
    Fx = tr.drift_velocity(0.0, x[:, :4] / B4.mu, x[:, 4:])
    Fy = tr.drift_velocity(0.0, y[:, :4] / B4.mu, y[:, 4:])
    ratio = np.linalg.norm(Fx - Fy, axis=1) / np.linalg.norm(x - y, axis=1)
    assert ratio.max() <= 3 * L5


# ---------------------------------------------------------------- constants


def test_estimate_damping_lipschitz():
    beta = 0.37
    rep = estimate_constants(ModelSpec(B4, drift=LinearDamping(beta)), 3.0, 10_000, seed=1)
    assert rep.L_f == pytest.approx(beta, rel=1e-2)
    assert rep.L_f <= beta * (1 + 1e-12)
    assert rep.K_f <= beta ** 2
    assert rep.probes["x"].shape == (10_000, 8)


def test_estimate_constant_jump():
    c = np.array([0.5, -0.2, 0.0, 0.1])
    nu = FiniteAtoms([1.0, 2.0], [1.5, 0.5])
    spec = ModelSpec(B4, jump=SeparableJump(c, mark_map=lambda z: np.ones_like(z)))
    rep = estimate_constants(spec, 2.0, 500, seed=0, nu=nu)
    lam_c2 = 2.0 * float(c @ c)
    assert rep.K_g >= lam_c2 * (1 - 1e-12)
    assert rep.R_g == 0.0
    assert rep.K == pytest.approx(lam_c2, rel=1e-14)
    assert rep.L_g == 0.0


def test_tension_lipschitz_monotone_in_radius():
    spec = ModelSpec(B4, nl=NonlinearityM.affine(b=1.0))
    L = [estimate_constants(spec, R, 2000, seed=0).L_R for R in (1.0, 2.0, 4.0, 8.0)]
    assert all(np.diff(L) > 0)
    # growth roughly quadratic once the tension dominates
    assert L[3] / L[2] == pytest.approx(4.0, rel=0.3)


def test_growth_certification_per_ball():
    beta, R = 0.2, 3.0
    nl = NonlinearityM.affine(0.5, 1.0)
    rep = estimate_constants(ModelSpec(B4, nl=nl, drift=LinearDamping(beta)), R, 2000, seed=0)
    m_max = nl.a + nl.b * R ** 2 / B4.mu1
    assert rep.K_F_ball <= (beta + m_max) ** 2 * R ** 2 / (1 + R ** 2) + 1e-9


def test_declared_violations_reported():
    spec = ModelSpec(B4, drift=LinearDamping(0.5), constants=DeclaredConstants(L_f=0.1, K_f=1.0))
    rep = estimate_constants(spec, 1.0, 200, seed=0)
    assert any(v.startswith("L_f") for v in rep.violations)
    assert not any(v.startswith("K_f") for v in rep.violations)
    with pytest.raises(ValueError):
        estimate_constants(spec, 1.0, 50)


def test_multiplicative_jump_constants():
    nu = FiniteAtoms([-0.3, 0.3], [0.25, 0.25])
    coef = PointwiseCoefficient(lambda t, xi, u, ut, ux, z: z * ut, has_mark=True)
    basis = build_hinged_basis(1.0, 4, 64)
    spec = ModelSpec(basis, jump=lift_pointwise(coef, basis))
    rep = estimate_constants(spec, 2.0, 1000, seed=0, nu=nu)
    assert rep.K == 0.0
    assert rep.R_g == pytest.approx(math.sqrt(0.045), rel=1e-9)
    assert rep.L_g == pytest.approx(math.sqrt(0.045), rel=1e-9)
    assert isinstance(ModelSpec(basis).jump, ZeroJump)
