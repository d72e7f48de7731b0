"""Named run configurations, one per verification scenario."""
from __future__ import annotations

from dataclasses import replace

from .config import (BasisSection, HarnessSection, InitialSection, ModelSection, NoiseSection,
                     RunConfig, RunSection, SolverSection, validate)

__all__ = ["PRESETS", "get_preset"]


def _zero():
    return RunConfig(
        basis=BasisSection("hinged", 1.0, 4, 0),
        initial=InitialSection(a=(1.0,)),
        solver=SolverSection(dt=0.01, T=1.0),
        harness=HarnessSection(paths=4, output_dt=0.1),
    )


def _hinged_basic():
    # weak tension keeps the splitting error of V (order dt * m(y)) below 1e-6
    return RunConfig(
        basis=BasisSection("hinged", 1.0, 16, 0),
        model=ModelSection(m_b=1.0),
        initial=InitialSection(a=(0.02, 0.005, 0.002), b=(0.1,)),
        solver=SolverSection(dt=1e-4, T=10.0),
        harness=HarnessSection(paths=2, output_dt=0.1),
    )


def _damped_beam():
    return RunConfig(
        basis=BasisSection("hinged", 1.0, 8, 0),
        model=ModelSection(m_b=1.0, drift="damping", beta=0.2, R_g=0.0, K=0.0),
        initial=InitialSection(a=(0.3, 0.1)),
        solver=SolverSection(dt=1e-3, T=20.0),
        harness=HarnessSection(paths=2, output_dt=0.1, checks=("stability", "supermartingale")),
    )


def _khasminskii_demo():
    return RunConfig(
        basis=BasisSection("hinged", 1.0, 8, 0),
        model=ModelSection(m_b=1.0, drift="damping", beta=0.5, jump="additive", jump_mode=1,
                           K_f=1.0, K_g=1.0),
        noise=NoiseSection("atoms", marks=(-1.0, 1.0), masses=(0.5, 0.5)),
        initial=InitialSection(a=(0.1,)),
        solver=SolverSection(dt=5e-3, T=5.0),
        harness=HarnessSection(paths=10000, levels=(4.0, 8.0, 16.0), output_dt=0.05,
                               checks=("khasminskii",)),
    )


def _stability_k0():
    # multiplicative jumps z * u_t, z = +-0.3 at rate 0.5: R_g^2 = 0.045
    return RunConfig(
        basis=BasisSection("hinged", 1.0, 8, 0),
        model=ModelSection(m_b=1.0, alpha=1.0, drift="damping", beta=0.2, jump="pointwise",
                           jump_field="multiplicative", R_g=0.21213203435596426, K=0.0),
        noise=NoiseSection("atoms", marks=(-0.3, 0.3), masses=(0.25, 0.25)),
        initial=InitialSection(a=(0.3, 0.1)),
        solver=SolverSection(dt=0.01, T=10.0),
        harness=HarnessSection(paths=10000, output_dt=0.1, levels=(),
                               checks=("stability", "supermartingale"), dt_levels=2),
    )


def _stability_kpos():
    # additive jumps +-0.5 on mode 1 at rate 1: R_g = 0, K = 0.25
    return RunConfig(
        basis=BasisSection("hinged", 1.0, 8, 0),
        model=ModelSection(m_b=1.0, alpha=1.0, drift="damping", beta=0.2, jump="additive",
                           jump_mode=1, R_g=0.0, K=0.25),
        noise=NoiseSection("atoms", marks=(-0.5, 0.5), masses=(0.5, 0.5)),
        initial=InitialSection(a=(0.3, 0.1)),
        solver=SolverSection(dt=0.01, T=20.0),
        harness=HarnessSection(paths=10000, output_dt=0.1, levels=(),
                               checks=("stability",), dt_levels=2),
    )


def _picard_demo():
    # L_f = beta + tension Lipschitz bound on the truncation ball (0.3 + 0.304)
    return RunConfig(
        basis=BasisSection("hinged", 1.0, 8, 0),
        model=ModelSection(m_b=0.25, drift="damping", beta=0.3, jump="pointwise",
                           jump_field="multiplicative", L_f=0.61, L_g=0.2828427124746190,
                           r_trunc=2.0),
        noise=NoiseSection("atoms", marks=(-0.2, 0.2), masses=(1.0, 1.0)),
        initial=InitialSection(a=(0.1, 0.03), b=(0.5,)),
        solver=SolverSection(dt=1e-2, T=1.0, picard_tol=1e-13, picard_max_iter=100,
                             picard_lambda=5.0, picard_dt_grid=(1e-2, 5e-3, 2.5e-3)),
        harness=HarnessSection(paths=1),
        run=RunSection(seed=7),
    )


def _picard_linear():
    return replace(_picard_demo(), model=replace(_picard_demo().model, m_b=0.0, L_f=0.3))


def _picard_zero():
    return RunConfig(
        basis=BasisSection("hinged", 1.0, 4, 0),
        model=ModelSection(L_f=0.0, L_g=0.0, r_trunc=1.0),
        initial=InitialSection(a=(0.1,), b=(0.2,)),
        solver=SolverSection(dt=1e-2, T=1.0, picard_dt_grid=(1e-2, 5e-3, 2.5e-3)),
        harness=HarnessSection(paths=1),
    )


def _isometry():
    return RunConfig(
        basis=BasisSection("hinged", 1.0, 4, 0),
        model=ModelSection(jump="additive", jump_mode=1, drift="damping", beta=0.2),
        noise=NoiseSection("atoms", marks=(1.0,), masses=(1.0,)),
        initial=InitialSection(a=(0.1,)),
        solver=SolverSection(dt=1e-2, T=1.0),
        harness=HarnessSection(paths=2, isometry_samples=100000),
    )


PRESETS = {
    "zero": _zero,
    "hinged-basic": _hinged_basic,
    "damped-beam": _damped_beam,
    "khasminskii-demo": _khasminskii_demo,
    "stability-K0": _stability_k0,
    "stability-Kpos": _stability_kpos,
    "picard-demo": _picard_demo,
    "picard-linear": _picard_linear,
    "picard-zero": _picard_zero,
    "isometry": _isometry,
}


def get_preset(name):
    try:
        cfg = replace(PRESETS[name](), name=name)
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") \
            from None
    validate(cfg)
    return cfg
