"""Observation operators, Gaussian localization and the Kalman-gain solve."""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import IndefiniteCovariance, NoGeometry, ShapeMismatch, SingularInnovation
from .linalg import cholesky_jittered

log = logging.getLogger(__name__)

INNOVATION_JITTER = 1e-10


class ObservationModel:
    """Observation operator ``h`` with Gaussian error covariance ``cov_obs``.

    Give either a callable ``h`` (columns in, columns out) or a matrix
    ``linear_h`` (dense or sparse).  ``state_coords`` (n x d) and
    ``obs_coords`` (m x d) place state and observation components in space for
    localization.  ``local_space = (to_local, from_local)`` optionally names a
    pair of mutually inverse linear maps (columns in, columns out) into the
    variables whose covariances with the observations are actually local; the
    cross covariance is tapered there and mapped back.
    """

    def __init__(self, cov_obs, h=None, linear_h=None, state_coords=None, obs_coords=None, local_space=None):
        if (h is None) == (linear_h is None):
            raise ValueError("give exactly one of h and linear_h")
        self.cov_obs = np.atleast_2d(np.asarray(cov_obs, dtype=float))
        self.linear_h = linear_h
        self._h = h
        self.state_coords = None if state_coords is None else np.asarray(state_coords, dtype=float)
        self.obs_coords = None if obs_coords is None else np.asarray(obs_coords, dtype=float)
        self.local_space = local_space
        if linear_h is not None and linear_h.shape[0] != self.m:
            raise ShapeMismatch(f"H has {linear_h.shape[0]} rows but cov_obs is {self.m}x{self.m}")

    @property
    def m(self):
        return self.cov_obs.shape[0]

    @property
    def is_linear(self):
        return self.linear_h is not None

    def apply(self, ens):
        ens = np.asarray(ens, dtype=float)
        if self.linear_h is not None:
            return np.asarray(self.linear_h @ ens)
        return np.asarray(self._h(ens), dtype=float)

    __call__ = apply

    def reduced(self, pair):
        """``H_r(u) = H(phi u)`` in the coordinates of a projection pair."""
        if self.linear_h is not None:
            return ObservationModel(self.cov_obs, linear_h=np.asarray(self.linear_h @ pair.phi),
                                    obs_coords=self.obs_coords)
        phi = pair.phi
        return ObservationModel(self.cov_obs, h=lambda u: self._h(phi @ u), obs_coords=self.obs_coords)

    def dense_h(self):
        if self.linear_h is None:
            raise ValueError("observation operator is not linear")
        return self.linear_h.toarray() if sp.issparse(self.linear_h) else np.asarray(self.linear_h)

    @classmethod
    def identity(cls, n, variance=1.0):
        return cls(variance * np.eye(n), linear_h=np.eye(n))


@dataclass(frozen=True)
class LocalizationKernel:
    """Gaussian taper ``exp(-d^2 / (2 L^2))`` with ``L = radius`` in grid units."""

    radius: float
    kind: str = "gaussian"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("localization radius must be positive")
        if self.kind != "gaussian":
            raise ValueError(f"unsupported kernel {self.kind!r}")

    def matrix(self, a, b=None):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = a if b is None else np.atleast_2d(np.asarray(b, dtype=float))
        if np.isinf(self.radius):
            return np.ones((a.shape[0], b.shape[0]))
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
        return np.exp(-d2 / (2.0 * self.radius**2))

    def blocks(self, obs):
        """State-observation and observation-observation taper matrices."""
        if obs.state_coords is None or obs.obs_coords is None:
            raise NoGeometry("localization needs state and observation coordinates")
        return self.matrix(obs.state_coords, obs.obs_coords), self.matrix(obs.obs_coords)


def kalman_gain(cross, innov, cov_obs, indefinite_ok=False):
    """``cross @ inv(innov + cov_obs)`` via Cholesky.

    A failed factorization is retried with a ``1e-10 * trace / m`` diagonal
    shift.  With ``indefinite_ok`` an ensemble part ``innov`` that drags the sum
    below positive definiteness is shifted up by its most negative eigenvalue
    (logged), so the factored matrix stays bounded below by ``cov_obs``.
    """
    s = innov + cov_obs
    s = 0.5 * (s + s.T)
    try:
        c = cholesky_jittered(s, jitter=INNOVATION_JITTER, error=SingularInnovation)
    except SingularInnovation:
        if not indefinite_ok:
            raise
        sym = 0.5 * (innov + innov.T)
        lam_min = float(np.linalg.eigvalsh(sym)[0])
        if not np.isfinite(lam_min):
            raise IndefiniteCovariance("innovation covariance is not finite")
        shift = max(0.0, -lam_min)
        log.warning("indefinite innovation covariance (min eigenvalue %.3e); shifting by %.3e", lam_min, shift)
        c = cholesky_jittered(s + shift * np.eye(s.shape[0]), jitter=INNOVATION_JITTER, error=IndefiniteCovariance)
    return sla.cho_solve((c, True), cross.T).T
