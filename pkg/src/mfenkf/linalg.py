"""Small dense linear-algebra helpers built on Cholesky factorizations."""

import logging

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)


def cholesky_jittered(a, jitter=1e-12, error=np.linalg.LinAlgError):
    """Lower Cholesky factor of a symmetric matrix.

    On failure the diagonal is shifted by ``jitter * trace / n`` and the
    factorization retried once; if that also fails ``error`` is raised.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    try:
        return sla.cholesky(a, lower=True)
    except np.linalg.LinAlgError:
        pass
    shift = jitter * abs(np.trace(a)) / n
    if shift == 0.0:
        raise error("matrix is not positive definite")
    log.debug("cholesky failed, retrying with diagonal shift %.3e", shift)
    try:
        return sla.cholesky(a + shift * np.eye(n), lower=True)
    except np.linalg.LinAlgError as exc:
        raise error("matrix is not positive definite") from exc


def spd_solve_right(b, a, jitter=1e-12, error=np.linalg.LinAlgError):
    """Return ``b @ inv(a)`` for symmetric positive definite ``a``."""
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    if a.shape[0] == 0:
        return np.zeros((b.shape[0], 0))
    c = cholesky_jittered(a, jitter=jitter, error=error)
    return sla.cho_solve((c, True), b.T).T


def logdet_spd(a):
    """Log-determinant of an SPD matrix via its Cholesky factor."""
    c = sla.cholesky(np.asarray(a, dtype=float), lower=True)
    return 2.0 * np.sum(np.log(np.diag(c)))


def symmetrize(a):
    return 0.5 * (a + a.T)
