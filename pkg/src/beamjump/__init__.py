"""Spectral-Galerkin simulation of a stochastic extensible beam with Poisson jumps."""
from .spectral_core import (SpectralBasis, SpectralState, build_clamped_basis,
                            build_hinged_basis, group_apply, h_inner, h_norm)
from .lyapunov import NonlinearityM, POperator, lambda_window, phi_lyapunov, v_lyapunov
from .jump_noise import FiniteAtoms, DensityMarks, PoissonRealization, sample_realization
from .coefficients import (DeclaredConstants, LinearDamping, ModelSpec, PointwiseCoefficient,
                           SeparableJump, eval_F, eval_G, lift_pointwise, truncate_drift)
from .pathwise_solver import (PicardConfig, SolverConfig, integrate_path, picard_solve,
                              step_exponential)

__version__ = "0.1.0"
