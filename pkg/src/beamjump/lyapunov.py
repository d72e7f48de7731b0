r"""
Lyapunov functionals for the extensible beam and the damped-energy operator.

Two functionals are used. The nonexplosion functional

.. math::

    V(x) = \tfrac12 \|x\|_{\mathcal H}^2 + \tfrac12 M(\|B^{1/2} x_1\|^2)

is conserved by the undamped deterministic flow, and the stability functional

.. math::

    \Phi(x) = \tfrac12 \langle P x, x\rangle_{\mathcal H} + M(\|B^{1/2} x_1\|^2)

uses the block operator ``P = [[beta^2 A^-2 + 2, beta A^-2], [beta, 2]]``,
which is block diagonal in the eigenbasis. ``M`` is the antiderivative of the
tension coefficient ``m``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import IdentityViolation
from .spectral_core import SpectralState, h_inner, h_norm

__all__ = [
    "NonlinearityM", "POperator", "m_antiderivative", "stretch", "v_lyapunov",
    "v_gradient", "phi_gradient", "apply_P", "p_identity_drift", "phi_lyapunov",
    "energy_E", "p_norm", "lambda_window", "khasminskii_rate",
]


@dataclass(frozen=True)
class NonlinearityM:
    """Tension coefficient ``m`` and its antiderivative ``M``.

    The default is the affine Woinowsky-Krieger form ``m(r) = a + b r``. A
    general nonnegative ``C^1`` function may be supplied through ``func``, in
    which case ``M`` is evaluated by adaptive quadrature.

    ``alpha`` is the declared constant with ``y m(y) >= alpha M(y)`` for
    ``y >= 0``; see :meth:`verify`.
    """

    a: float = 0.0
    b: float = 0.0
    alpha: float = 1.0
    func: Optional[Callable[[float], float]] = None
    name: str = "affine"

    def __post_init__(self):
        if self.func is None and (self.a < 0 or self.b < 0):
            raise ValueError("affine tension requires a, b >= 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @classmethod
    def affine(cls, a=0.0, b=0.0, alpha=1.0):
        return cls(a=float(a), b=float(b), alpha=float(alpha))

    @classmethod
    def from_callable(cls, func, alpha, name="custom"):
        return cls(alpha=float(alpha), func=func, name=name)

    @property
    def is_zero(self):
        return self.func is None and self.a == 0.0 and self.b == 0.0

    def m(self, r):
        if self.func is None:
            return self.a + self.b * np.asarray(r, dtype=float)
        return np.vectorize(self.func, otypes=[float])(r)

    def M(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise ValueError("M is defined for nonnegative arguments only")
        if self.func is None:
            return self.a * s + 0.5 * self.b * s * s
        return np.vectorize(self._quad, otypes=[float])(s)

    def _quad(self, s):
        val, _ = integrate.quad(self.func, 0.0, s, epsabs=1e-12, epsrel=1e-12, limit=200)
        return val

    def verify(self, y_max=1e6, n=400):
        """Sample the structural conditions on a log-spaced grid.

        Returns a list of human-readable violations (empty if none).
        """
        y = np.concatenate([[0.0], np.logspace(-8, np.log10(y_max), n)])
        mv = self.m(y)
        Mv = self.M(y)
        problems = []
        if np.any(mv < 0):
            problems.append(f"m negative at y={y[np.argmax(mv < 0)]:.3g}")
        if Mv[0] != 0:
            problems.append("M(0) != 0")
        if np.any(np.diff(Mv) < -1e-12 * np.maximum(1.0, np.abs(Mv[1:]))):
            problems.append("M not nondecreasing")
        gap = y * mv - self.alpha * Mv
        slack = 1e-12 * np.maximum(1.0, np.abs(y * mv))
        if np.any(gap < -slack):
            i = int(np.argmax(gap < -slack))
            problems.append(f"y m(y) < alpha M(y) at y={y[i]:.3g} (gap {gap[i]:.3e})")
        return problems


def m_antiderivative(s, nl):
    """``M(s) = int_0^s m(r) dr``; raises ``ValueError`` for ``s < 0``."""
    if s < 0:
        raise ValueError(f"M(s) requires s >= 0, got {s}")
    return float(nl.M(s))


def stretch(a, mu):
    """``||B^{1/2} x_1||^2 = sum_k mu_k a_k^2`` (batched over leading axes)."""
    return np.sum(mu * a * a, axis=-1)


def v_lyapunov(x, nl):
    y = stretch(x.a, x.basis.mu)
    return 0.5 * h_norm(x) ** 2 + 0.5 * float(nl.M(y))


def energy_E(x, nl):
    y = stretch(x.a, x.basis.mu)
    return h_norm(x) ** 2 + float(nl.M(y))


def v_gradient(x, nl):
    """H-gradient ``DV(x) = x + m(y) (A^-2 B x_1, 0)``."""
    mu = x.basis.mu
    my = float(nl.m(stretch(x.a, mu)))
    return SpectralState(x.a + my * x.a / mu, x.b, x.basis)


@dataclass(frozen=True, eq=False)
class POperator:
    """Block operator ``P`` for damping coefficient ``beta`` on a basis."""

    beta: float
    basis: object

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")

    @property
    def blocks(self):
        """Per-mode 2x2 blocks in ``(a, b)`` coordinates, shape (N, 2, 2)."""
        mu = self.basis.mu
        beta = self.beta
        out = np.empty((mu.size, 2, 2))
        out[:, 0, 0] = beta ** 2 / mu ** 2 + 2.0
        out[:, 0, 1] = beta / mu ** 2
        out[:, 1, 0] = beta
        out[:, 1, 1] = 2.0
        return out

    def orthonormal_blocks(self):
        """Blocks after the similarity ``(a, b) -> (mu a, b)``; symmetric."""
        mu = self.basis.mu
        beta = self.beta
        out = np.empty((mu.size, 2, 2))
        out[:, 0, 0] = beta ** 2 / mu ** 2 + 2.0
        out[:, 0, 1] = out[:, 1, 0] = beta / mu
        out[:, 1, 1] = 2.0
        return out

    @property
    def norm(self):
        try:
            return self._norm
        except AttributeError:
            pass
        blk = self.orthonormal_blocks()
        # largest eigenvalue of each symmetric positive block
        half_tr = 0.5 * (blk[:, 0, 0] + blk[:, 1, 1])
        rad = np.sqrt((0.5 * (blk[:, 0, 0] - blk[:, 1, 1])) ** 2 + blk[:, 0, 1] ** 2)
        val = float(np.max(half_tr + rad))
        object.__setattr__(self, "_norm", val)
        return val

    def apply_arrays(self, a, b):
        mu = self.basis.mu
        beta = self.beta
        pa = (beta ** 2 / mu ** 2 + 2.0) * a + (beta / mu ** 2) * b
        pb = beta * a + 2.0 * b
        return pa, pb

    def quadratic(self, a, b):
        """``<P x, x>_H`` for batched coefficient arrays."""
        mu = self.basis.mu
        beta = self.beta
        return np.sum((beta ** 2 + 2.0 * mu ** 2) * a * a + 2.0 * beta * a * b + 2.0 * b * b,
                      axis=-1)


def apply_P(x, P):
    P.basis.check(x.basis)
    pa, pb = P.apply_arrays(x.a, x.b)
    return SpectralState(pa, pb, x.basis)


def p_norm(P):
    return P.norm


def p_identity_drift(x, P, rtol=1e-10):
    """``<Acal x, P x>_H`` evaluated directly and by its closed form.

    The closed form is ``-beta ||A x1||^2 + beta^2 <x1, x2> + beta ||x2||^2``.
    Raises :class:`IdentityViolation` if the two differ by more than ``rtol``
    relative to the magnitude of the contributing terms.
    """
    P.basis.check(x.basis)
    mu = x.basis.mu
    beta = P.beta
    gen = SpectralState(x.b, -mu ** 2 * x.a, x.basis)
    direct = h_inner(gen, apply_P(x, P))
    terms = np.array([
        -beta * np.sum((mu * x.a) ** 2),
        beta ** 2 * np.dot(x.a, x.b),
        beta * np.sum(x.b ** 2),
    ])
    closed = float(terms.sum())
    scale = max(np.abs(terms).sum(), np.sum((mu * x.a) ** 2) + np.sum(x.b ** 2), 1e-300)
    if abs(direct - closed) > rtol * scale:
        raise IdentityViolation(
            f"<Acal x, Px> direct={direct!r} closed={closed!r} (scale {scale:.3e})")
    return direct


def phi_lyapunov(x, P, nl):
    P.basis.check(x.basis)
    y = stretch(x.a, x.basis.mu)
    return 0.5 * float(P.quadratic(x.a, x.b)) + float(nl.M(y))


def phi_gradient(x, P, nl):
    """``DPhi(x) = P x + 2 m(y) (A^-2 B x_1, 0)``."""
    mu = x.basis.mu
    my = float(nl.m(stretch(x.a, mu)))
    pa, pb = P.apply_arrays(x.a, x.b)
    return SpectralState(pa + 2.0 * my * x.a / mu, pb, x.basis)


def lambda_window(beta, mu1, R_g, alpha, P):
    """Upper end of the admissible exponential decay rate.

    Returns ``max(0, min(2 (beta - 2 C beta^2 - R_g^2) / ||P||, alpha beta))``
    with ``C = max(1 / (2 mu1^2), 1/2)``. Zero means the stability estimate is
    not available with these constants.
    """
    c = max(1.0 / (2.0 * mu1 ** 2), 0.5)
    margin = beta - 2.0 * c * beta ** 2 - R_g ** 2
    if margin <= 0:
        return 0.0
    return max(0.0, min(2.0 * margin / p_norm(P), alpha * beta))


def khasminskii_rate(K_f, K_g):
    """Gronwall rate ``C = (1 + K_f + K_g) / 2`` of the nonexplosion estimate."""
    return 0.5 * (1.0 + K_f + K_g)
