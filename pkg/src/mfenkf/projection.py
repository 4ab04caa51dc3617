"""Lift/restriction operators between a reduced space and the full space.

``phi`` (n x r) lifts reduced coordinates, ``phi_star = phi.T M`` (r x n)
projects M-orthogonally back.  ``M`` may be given densely, as a sparse
matrix, or through a factor ``B`` with ``M = B.T B`` so that large grids never
form an n x n dense matrix.
"""

import numpy as np
import scipy.linalg as sla

from .control_variates import CvGain, GainFlavor
from .errors import BasisDegenerate, ShapeMismatch, SingularControlCovariance
from .linalg import spd_solve_right

BIORTHO_TOL = 1e-10


def _apply_m(x, m_inner=None, m_factor=None):
    if m_factor is not None:
        return m_factor.T @ (m_factor @ x)
    if m_inner is not None:
        return m_inner @ x
    return x


class ProjectionPair:
    """M-orthogonal lift/restriction pair.

    Parameters
    ----------
    phi : (n, r) array
    m_inner : (n, n) array or sparse matrix, optional
        Inner-product matrix.  Identity when neither it nor ``m_factor`` is given.
    m_factor : (k, n) array or sparse matrix, optional
        Factor ``B`` with ``M = B.T @ B``.
    phi_star : (r, n) array, optional
        Precomputed adjoint; derived from ``phi`` and ``M`` when omitted.
    orthonormalize : bool
        Re-orthonormalize ``phi`` in the M-inner product (one Gram-Schmidt
        pass) when ``phi_star @ phi`` misses the identity by more than 1e-10.
    """

    def __init__(self, phi, m_inner=None, m_factor=None, phi_star=None, orthonormalize=True):
        phi = np.asarray(phi, dtype=float)
        if phi.ndim != 2:
            raise ShapeMismatch("phi must be 2-D (n, r)")
        self.m_inner = m_inner
        self.m_factor = m_factor
        if phi_star is None:
            phi_star = np.asarray(_apply_m(phi, m_inner, m_factor)).T
        phi_star = np.asarray(phi_star, dtype=float)
        if phi_star.shape != phi.shape[::-1]:
            raise ShapeMismatch(f"phi_star {phi_star.shape} does not match phi {phi.shape}")
        self.phi, self.phi_star = phi, phi_star
        if orthonormalize and self.biorthogonality_error() > BIORTHO_TOL:
            self._reorthonormalize()

    @property
    def n(self):
        return self.phi.shape[0]

    @property
    def r(self):
        return self.phi.shape[1]

    def gram(self):
        return self.phi_star @ self.phi

    def biorthogonality_error(self):
        if self.r == 0:
            return 0.0
        return float(np.max(np.abs(self.gram() - np.eye(self.r))))

    def _reorthonormalize(self):
        g = 0.5 * (self.gram() + self.gram().T)
        try:
            c = sla.cholesky(g, lower=True)
        except np.linalg.LinAlgError as exc:
            raise BasisDegenerate("basis Gram matrix is not positive definite") from exc
        # phi <- phi C^{-T}, phi_star <- C^{-1} phi_star
        self.phi = sla.solve_triangular(c, self.phi.T, lower=True).T
        self.phi_star = sla.solve_triangular(c, self.phi_star, lower=True)
        if self.biorthogonality_error() > BIORTHO_TOL:
            raise BasisDegenerate(f"biorthogonality error {self.biorthogonality_error():.2e} after re-orthonormalization")

    def inner(self, x, y):
        """``<x, y>_M`` for full-space vectors."""
        return float(np.asarray(x) @ np.asarray(_apply_m(np.asarray(y), self.m_inner, self.m_factor)))

    def projector(self):
        """Dense ``phi @ phi_star`` (n x n); only for small problems."""
        return self.phi @ self.phi_star

    def to_arrays(self):
        return {"phi": self.phi, "phi_star": self.phi_star, "dims": np.array([self.n, self.r], dtype=np.int64)}

    def save(self, path):
        np.savez(path, **self.to_arrays())

    @classmethod
    def load(cls, path):
        with np.load(path) as f:
            n, r = (int(v) for v in f["dims"])
            phi = f["phi"].reshape(n, r)
            phi_star = f["phi_star"].reshape(r, n)
        return cls(phi, phi_star=phi_star, orthonormalize=False)

    def __repr__(self):
        return f"ProjectionPair(n={self.n}, r={self.r})"


def identity_pair(n):
    return ProjectionPair(np.eye(n))


def empty_pair(n):
    """The degenerate r = 0 pair."""
    return ProjectionPair(np.zeros((n, 0)))


def lift(p, u):
    u = np.asarray(u, dtype=float)
    if u.shape[0] != p.r:
        raise ShapeMismatch(f"reduced vector has {u.shape[0]} rows, expected {p.r}")
    return p.phi @ u


def restrict(p, x):
    x = np.asarray(x, dtype=float)
    if x.shape[0] != p.n:
        raise ShapeMismatch(f"full vector has {x.shape[0]} rows, expected {p.n}")
    return p.phi_star @ x


def fixed_gain(p, factor=1.0):
    """Fixed projection gain ``S = factor * phi``.

    ``factor=0.5`` is the ancillary-variate approximation used by the
    multifidelity filter.
    """
    return CvGain(factor * p.phi, GainFlavor.FIXED_PROJECTION)


def optimal_gain_correction(cov_dxr_uhat, cov_uhat, p):
    """``S = phi + Cov(dx_r, uhat) Cov(uhat, uhat)^{-1}`` for ``uhat = phi_star x``."""
    corr = spd_solve_right(np.atleast_2d(cov_dxr_uhat), np.atleast_2d(cov_uhat), jitter=0.0,
                           error=SingularControlCovariance)
    return CvGain(p.phi + corr, GainFlavor.FIXED_PROJECTION)


def chain_pairs(pairs):
    """Compose a ladder of pairs (level l maps r_l -> r_{l-1}) into full-space pairs."""
    out = []
    phi, phi_star = None, None
    for q in pairs:
        phi = q.phi if phi is None else phi @ q.phi
        phi_star = q.phi_star if phi_star is None else q.phi_star @ phi_star
        out.append(ProjectionPair(phi, phi_star=phi_star, orthonormalize=False))
    return out

