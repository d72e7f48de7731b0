r"""
Truncated eigenbasis representation of the displacement/velocity phase space.

A state is the pair :math:`(u, u_t)` expanded in the first ``N`` eigenfunctions
:math:`e_k` of a positive self-adjoint operator :math:`A` on :math:`L^2(0, L)`,

.. math::

    u = \sum_k a_k e_k, \qquad u_t = \sum_k b_k e_k, \qquad A e_k = \mu_k e_k .

The phase-space norm is the graph norm :math:`\|Au\|^2 + \|u_t\|^2`, and the
linear part of the dynamics :math:`\ddot a_k = -\mu_k^2 a_k` is advanced exactly
by a per-mode rotation.

Two boundary conditions are supported:

    - hinged:  :math:`A = -\partial_x^2` with Dirichlet data, analytic sine basis
    - clamped: :math:`A = C^{1/2}` with :math:`C = \partial_x^4` and
      :math:`u = u_x = 0`, from a finite-difference eigensolve
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as sla

from .errors import BasisMismatch, ConfigError, NumericalError

__all__ = [
    "SpectralBasis", "SpectralState", "build_hinged_basis", "build_clamped_basis",
    "h_norm", "h_inner", "apply_A", "apply_B", "apply_A_inv2", "group_apply",
    "rotate", "to_grid", "from_grid", "grid_gradient", "MAX_CLAMPED_MODES",
]

MAX_CLAMPED_MODES = 64


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Eigenpairs of ``A`` together with grid evaluation tables.

    Parameters
    ----------
    bc_kind : {'hinged', 'clamped'}
    length : float
    n_modes : int
    grid_points : int
        Number of grid intervals ``G``; the grid has ``G + 1`` nodes including
        both end points.
    mu : ndarray, shape (N,)
        Eigenvalues of ``A``, strictly increasing.
    x : ndarray, shape (G + 1,)
    phi : ndarray, shape (N, G + 1)
        ``phi[k, j] = e_k(x_j)``.
    dphi : ndarray, shape (N, G + 1)
        Derivative of ``e_k`` at ``x_j``.
    weights : ndarray, shape (G + 1,)
        Quadrature weights for which ``phi`` is orthonormal.
    """

    bc_kind: str
    length: float
    n_modes: int
    grid_points: int
    mu: np.ndarray
    x: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    weights: np.ndarray
    _proj: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        for name in ("mu", "x", "phi", "dphi", "weights"):
            getattr(self, name).setflags(write=False)
        proj = (self.phi * self.weights).T.copy()
        proj.setflags(write=False)
        object.__setattr__(self, "_proj", proj)

    @property
    def key(self):
        return (self.bc_kind, float(self.length), int(self.n_modes))

    @property
    def mu1(self):
        return float(self.mu[0])

    def compatible(self, other):
        return self is other or self.key == other.key

    def check(self, other):
        if not self.compatible(other):
            raise BasisMismatch(f"basis {self.key} is not compatible with {other.key}")

    def unit(self, k, component="a"):
        """State with a single unit coefficient in mode ``k`` (1-based)."""
        a = np.zeros(self.n_modes)
        b = np.zeros(self.n_modes)
        (a if component == "a" else b)[k - 1] = 1.0
        return SpectralState(a, b, self)

    def zero(self):
        return SpectralState(np.zeros(self.n_modes), np.zeros(self.n_modes), self)

    def state(self, a=None, b=None):
        n = self.n_modes
        a = np.zeros(n) if a is None else np.asarray(a, dtype=float)
        b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
        return SpectralState(a, b, self)


@dataclass(frozen=True, eq=False)
class SpectralState:
    """Mode coefficients ``(a, b)`` of displacement and velocity."""

    a: np.ndarray
    b: np.ndarray
    basis: SpectralBasis

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float)
        n = self.basis.n_modes
        if a.shape != (n,) or b.shape != (n,):
            raise ValueError(f"expected coefficient vectors of length {n}, "
                             f"got {a.shape} and {b.shape}")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def __add__(self, other):
        self.basis.check(other.basis)
        return SpectralState(self.a + other.a, self.b + other.b, self.basis)

    def __sub__(self, other):
        self.basis.check(other.basis)
        return SpectralState(self.a - other.a, self.b - other.b, self.basis)

    def __mul__(self, c):
        return SpectralState(c * self.a, c * self.b, self.basis)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralState(-self.a, -self.b, self.basis)

    def allclose(self, other, rtol=1e-12, atol=0.0):
        self.basis.check(other.basis)
        return (np.allclose(self.a, other.a, rtol=rtol, atol=atol)
                and np.allclose(self.b, other.b, rtol=rtol, atol=atol))

    def orthonormal(self):
        """Coordinates ``(mu * a, b)`` in which the H-norm is Euclidean."""
        return np.concatenate([self.basis.mu * self.a, self.b])


def _validate_sizes(L, N, G):
    if not (np.isfinite(L) and L > 0):
        raise ConfigError("length", f"must be a positive real, got {L!r}")
    if int(N) != N or N < 1:
        raise ConfigError("n_modes", f"must be a positive integer, got {N!r}")
    if int(G) != G or G < 2 * N:
        raise ConfigError("grid_points", f"must be an integer >= 2*n_modes = {2 * N}, got {G!r}")


def build_hinged_basis(L, N, G=None):
    """Dirichlet Laplacian eigenbasis on ``(0, L)``.

    ``mu_k = (k pi / L)^2`` and ``e_k = sqrt(2/L) sin(k pi x / L)``. The
    quadrature weights are those of the discrete sine transform, so the
    mode -> grid -> mode round trip is exact for ``N < G``.
    """
    G = 2 * N if G is None else G
    _validate_sizes(L, N, G)
    L, N, G = float(L), int(N), int(G)
    k = np.arange(1, N + 1)
    x = np.linspace(0.0, L, G + 1)
    wave = k * np.pi / L
    mu = wave ** 2
    norm = np.sqrt(2.0 / L)
    phi = norm * np.sin(np.outer(wave, x))
    phi[:, 0] = 0.0
    phi[:, -1] = 0.0
    dphi = norm * wave[:, None] * np.cos(np.outer(wave, x))
    w = np.full(G + 1, L / G)
    w[0] = w[-1] = 0.0
    return SpectralBasis("hinged", L, N, G, mu, x, phi, dphi, w)


def clamped_second_difference(L, G):
    """Weighted second-difference operator ``W^{1/2} D`` for clamped data.

    ``D`` maps the ``G - 1`` interior nodal values to second differences at all
    ``G + 1`` nodes, with ghost values eliminated by ``u_{-1} = u_1`` (zero
    slope); ``W`` is the trapezoid weight. The five-point clamped biharmonic
    stencil equals ``D^T W D``, so the eigenvalues of ``A = C^{1/2}`` are the
    singular values of this matrix.
    """
    h = L / G
    j = np.arange(G + 1)
    rows, cols, vals = [], [], []
    for shift, val in ((-1, 1.0), (0, -2.0), (1, 1.0)):
        i = j + shift
        ok = (i >= 1) & (i <= G - 1)
        rows.append(j[ok])
        cols.append(i[ok] - 1)
        vals.append(np.full(ok.sum(), val))
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    end = (rows == 0) | (rows == G)
    vals[end] = 2.0 * np.sqrt(0.5)
    return sparse.csc_matrix((vals / h ** 2, (rows, cols)), shape=(G + 1, G - 1))


def clamped_biharmonic_matrix(L, G):
    """Dense five-point clamped biharmonic on the interior nodes."""
    D = clamped_second_difference(L, G)
    return (D.T @ D).toarray()


def build_clamped_basis(L, N, G):
    """Square root of the clamped biharmonic from its finite-difference factor.

    ``mu_k`` is the k-th smallest singular value of ``W^{1/2} D`` (see
    :func:`clamped_second_difference`), obtained as a positive eigenvalue of
    the symmetric augmented matrix ``[[0, D], [D^T, 0]]``. Working with the
    factor instead of ``D^T D`` keeps the low modes accurate to roughly
    ``eps * h^-2`` rather than ``eps * h^-4``. Eigenvectors are normalized in
    the discrete ``L^2`` inner product with weight ``h``.
    """
    _validate_sizes(L, N, G)
    if N > MAX_CLAMPED_MODES:
        raise ConfigError("n_modes", f"clamped basis supports at most {MAX_CLAMPED_MODES} modes")
    L, N, G = float(L), int(N), int(G)
    h = L / G
    D = clamped_second_difference(L, G)
    aug = sparse.bmat([[None, D], [D.T, None]]).tocsc()
    try:
        if 2 * G <= 256:
            lam, vec = linalg.eigh(aug.toarray())
            keep = lam > 0.5 * (np.pi / L) ** 2
            lam, vec = lam[keep][:N], vec[:, keep][:, :N]
        else:
            # eigenvalues just above a shift below the hinged ground state;
            # the two null vectors of the augmented matrix lie below it
            lam, vec = sla.eigsh(aug, k=N, sigma=0.5 * (np.pi / L) ** 2, which="LA")
            order = np.argsort(lam)
            lam, vec = lam[order], vec[:, order]
    except (linalg.LinAlgError, sla.ArpackError, RuntimeError) as exc:
        raise NumericalError(f"clamped eigensolve failed for L={L}, G={G}: {exc}") from exc
    if lam.size != N or np.any(lam <= 0) or np.any(np.diff(lam) <= 0):
        raise NumericalError(
            f"clamped eigenvalues not positive and strictly increasing (L={L}, N={N}, "
            f"G={G}): {lam[:5]}")
    interior = vec[G + 1:, :]
    interior = interior / np.sqrt(h * np.sum(interior ** 2, axis=0))
    # sign convention: positive slope leaving the left support
    interior = interior * np.where(interior[0, :] < 0, -1.0, 1.0)
    phi = np.zeros((N, G + 1))
    phi[:, 1:-1] = interior.T
    dphi = np.zeros_like(phi)
    dphi[:, 1:-1] = (phi[:, 2:] - phi[:, :-2]) / (2.0 * h)
    x = np.linspace(0.0, L, G + 1)
    w = np.full(G + 1, h)
    w[0] = w[-1] = 0.0
    return SpectralBasis("clamped", L, N, G, lam, x, phi, dphi, w)


def h_inner(x, y):
    """Phase-space inner product ``<A x1, A y1> + <x2, y2>``."""
    x.basis.check(y.basis)
    mu2 = x.basis.mu ** 2
    return float(np.dot(mu2 * x.a, y.a) + np.dot(x.b, y.b))


def h_norm(x):
    mu = x.basis.mu
    return float(np.sqrt(np.sum((mu * x.a) ** 2) + np.sum(x.b ** 2)))


def apply_A(v, basis):
    return basis.mu * np.asarray(v, dtype=float)


def apply_B(v, basis):
    # B = A in every supported configuration
    return basis.mu * np.asarray(v, dtype=float)


def apply_A_inv2(v, basis):
    return np.asarray(v, dtype=float) / basis.mu ** 2


def rotate(a, b, mu, t):
    """Exact flow of ``a'' = -mu^2 a`` over time ``t`` (broadcasting)."""
    wt = mu * t
    c = np.cos(wt)
    s = np.sin(wt)
    return c * a + (s / mu) * b, -mu * s * a + c * b


def group_apply(x, t):
    """Apply the unitary group ``exp(t * Acal)`` to a state; ``t`` may be negative."""
    a, b = rotate(x.a, x.b, x.basis.mu, float(t))
    return SpectralState(a, b, x.basis)


def _check_len(v, n, what):
    if v.shape[-1] != n:
        raise ValueError(f"{what} has trailing size {v.shape[-1]}, expected {n}")


def to_grid(v, basis):
    """Evaluate ``sum_k v_k e_k`` at the grid nodes (batched over leading axes)."""
    v = np.asarray(v, dtype=float)
    _check_len(v, basis.n_modes, "mode vector")
    return v @ basis.phi


def from_grid(values, basis):
    """Project grid values onto the retained modes."""
    values = np.asarray(values, dtype=float)
    _check_len(values, basis.grid_points + 1, "grid vector")
    return values @ basis._proj


def grid_gradient(v, basis):
    """Values of ``d/dx sum_k v_k e_k`` at the grid nodes."""
    v = np.asarray(v, dtype=float)
    _check_len(v, basis.n_modes, "mode vector")
    return v @ basis.dphi
