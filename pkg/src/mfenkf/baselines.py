"""Single-fidelity EnKF variants and the corrected multilevel baseline."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .ensemble import anomalies, as_ensemble, assemble, empirical_mean, inflate
from .errors import ConfigError, DivergedAnalysis, NonSpdTarget, ShapeMismatch
from .multifidelity import MultifidelityEnsemble, NoiseMethod, ladder_analysis
from .observations import LocalizationKernel, ObservationModel, kalman_gain

__all__ = [
    "LocalizationKernel",
    "ObservationModel",
    "ShrinkageTarget",
    "enkf_analysis",
    "localized_enkf_analysis",
    "localized_sample_covariance",
    "mlenkf_corrected_analysis",
    "rblw_intensity",
    "shrinkage_enkf_analysis",
]


def _single(prior):
    return MultifidelityEnsemble(as_ensemble(prior), [], [], [])


def enkf_analysis(prior, obs, y, sampler, alpha=1.0):
    """Perturbed-observations EnKF with pre-gain multiplicative inflation."""
    return ladder_analysis(_single(prior), obs, y, NoiseMethod(), [sampler], [alpha]).principal


def localized_enkf_analysis(prior, obs, y, sampler, alpha=1.0, kernel=None):
    """EnKF with the cross and innovation covariances tapered by ``kernel``."""
    if kernel is None:
        raise ConfigError("localized EnKF needs a kernel")
    return ladder_analysis(_single(prior), obs, y, NoiseMethod(), [sampler], [alpha], kernel).principal


def localized_sample_covariance(samples, coords, kernel):
    """Schur product of a sample covariance with a localization taper."""
    a = anomalies(samples)
    return kernel.matrix(coords) * (a @ a.T)


class ShrinkageTarget:
    """SPD target covariance with its observation-space images cached."""

    def __init__(self, cov, obs):
        cov = np.asarray(cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ShapeMismatch("target must be square")
        try:
            sla.cholesky(cov, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NonSpdTarget("shrinkage target is not positive definite") from exc
        h = obs.dense_h()
        if h.shape[1] != cov.shape[0]:
            raise ShapeMismatch(f"target dimension {cov.shape[0]} vs state dimension {h.shape[1]}")
        self.cov = cov
        self.trace = float(np.trace(cov))
        self.cov_ht = cov @ h.T
        self.h_cov_ht = h @ self.cov_ht


def rblw_intensity(anom):
    """Rao-Blackwellized Ledoit-Wolf shrinkage intensity in ``[0, 1]``.

    ``anom`` are scaled anomalies (n x N); the scale-invariant closed form is
    evaluated through the N x N Gram matrix so no n x n matrix is formed.
    """
    p, n_mem = anom.shape
    tr_s = float(np.sum(anom**2))
    g = anom.T @ anom
    tr_s2 = float(np.sum(g**2))
    den = (n_mem + 2.0) * (tr_s2 - tr_s**2 / p)
    if not den > 0:
        return 1.0
    num = (n_mem - 2.0) / n_mem * tr_s2 + tr_s**2
    return float(min(1.0, max(0.0, num / den)))


def shrinkage_enkf_analysis(prior, obs, y, sampler, alpha=1.0, target=None, gamma=None):
    """EnKF whose background covariance is ``(1 - g) S + g mu T``.

    ``mu = tr(S) / tr(T)`` and ``g`` is the RBLW intensity unless ``gamma`` is
    given.  Needs a linear observation operator.
    """
    if target is None:
        raise ConfigError("shrinkage EnKF needs a target covariance")
    x = as_ensemble(prior)
    xm = empirical_mean(x)
    ax = inflate(anomalies(x), alpha)
    hx = obs.apply(assemble(xm, ax))
    hxa = anomalies(hx)
    g = rblw_intensity(ax) if gamma is None else float(gamma)
    if not 0.0 <= g <= 1.0:
        raise ConfigError("shrinkage intensity must lie in [0, 1]")
    mu = float(np.sum(ax**2)) / target.trace
    cross = (1.0 - g) * (ax @ hxa.T) + g * mu * target.cov_ht
    innov = (1.0 - g) * (hxa @ hxa.T) + g * mu * target.h_cov_ht
    gain = kalman_gain(cross, innov, obs.cov_obs)
    eta = sampler.draw(x.shape[1])
    xa = assemble(xm - gain @ (empirical_mean(hx) - y), ax - gain @ (hxa - anomalies(eta)))
    if not np.all(np.isfinite(xa)):
        raise DivergedAnalysis("non-finite member after analysis")
    return xa


def mlenkf_corrected_analysis(triple, obs, y, samplers, inflations=(1.0, 1.0), kernel=None):
    """Corrected, localized MLEnKF analysis (labelled ``corrected-MLEnKF`` in outputs).

    The background covariance is the signed measure
    ``Cov(X) - Phi Cov(Uhat) Phi^T + Phi Cov(U) Phi^T``, the mean is the
    multilevel difference estimator ``mean(X) - Phi (mean(Uhat) - mean(U))``,
    all three means are re-centered on the analysis mean and controls are
    re-projected from the principal at the next forecast.  Each level draws its
    own ``N(0, R)`` perturbations.
    """
    return ladder_analysis(triple, obs, y, NoiseMethod(), samplers, list(inflations), kernel, signed=True)
