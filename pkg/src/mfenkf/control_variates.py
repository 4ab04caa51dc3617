"""Linear control variates: gains, total-variate covariance, telescoping, cost.

A total variate ``zeta = chi - S (uhat - u)`` combines a principal variate
``chi`` with a control variate ``uhat`` and an independent ancillary variate
``u`` sharing the control's mean.  The gains below are the generalized
variance minimizers (and their empirical and fixed approximations).
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    DegenerateVarianceBudget,
    ShapeMismatch,
    SingularControlCovariance,
    SingularSumCovariance,
)
from .linalg import spd_solve_right, symmetrize


class GainFlavor(str, Enum):
    EXACT_MEAN = "exact-mean"
    ANCILLARY = "ancillary"
    HALF = "half"
    EMPIRICAL = "empirical"
    EMPIRICAL_FULL = "empirical-full"
    FIXED_PROJECTION = "fixed-projection"


@dataclass(frozen=True)
class CvGain:
    S: np.ndarray
    flavor: GainFlavor

    @property
    def shape(self):
        return self.S.shape


def _mat(a):
    return np.atleast_2d(np.asarray(a, dtype=float))


def _gain(cov_xu, cov, error):
    cov_xu, cov = _mat(cov_xu), _mat(cov)
    if cov_xu.shape[1] != cov.shape[0]:
        raise ShapeMismatch(f"cross covariance {cov_xu.shape} vs control covariance {cov.shape}")
    return spd_solve_right(cov_xu, cov, jitter=0.0, error=error)


def optimal_gain(cov_xu, cov_uu):
    """``S = Cov(x, u) Cov(u, u)^{-1}`` for a control variate with known mean."""
    return CvGain(_gain(cov_xu, cov_uu, SingularControlCovariance), GainFlavor.EXACT_MEAN)


def ancillary_gain(cov_xu, cov_uhat, cov_u):
    """Optimal gain when the control mean is replaced by an ancillary sample."""
    total = _mat(cov_uhat) + _mat(cov_u)
    return CvGain(_gain(cov_xu, total, SingularSumCovariance), GainFlavor.ANCILLARY)


def half_gain(cov_xu, cov_uu):
    """Ancillary gain for an ancillary variate with the control's covariance."""
    s = _gain(cov_xu, _mat(cov_uu) + _mat(cov_uu), SingularControlCovariance)
    return CvGain(s, GainFlavor.HALF)


def empirical_gain(cov_xu_emp, cov_uhat_emp, cov_u_exact):
    """Gain from sampled cross/control covariances and the exact ancillary covariance."""
    total = _mat(cov_uhat_emp) + _mat(cov_u_exact)
    return CvGain(_gain(cov_xu_emp, total, SingularSumCovariance), GainFlavor.EMPIRICAL)


def empirical_full_gain(cov_xu_emp, cov_uhat_emp, cov_u_emp):
    """Fully sampled gain.

    Undersampled covariances can make the sum singular; a pseudo-inverse is
    used instead of failing.  Diagnostic use only.
    """
    total = _mat(cov_uhat_emp) + _mat(cov_u_emp)
    return CvGain(_mat(cov_xu_emp) @ np.linalg.pinv(total, hermitian=True), GainFlavor.EMPIRICAL_FULL)


def total_variate_cov(cov_xx, cov_xu, cov_uhat, cov_u, S):
    """Covariance of ``chi - S (uhat - u)`` with ``u`` independent of (chi, uhat)."""
    cov_xx, cov_xu = _mat(cov_xx), _mat(cov_xu)
    S = S.S if isinstance(S, CvGain) else _mat(S)
    if S.shape != cov_xu.shape or cov_xx.shape[0] != S.shape[0]:
        raise ShapeMismatch(f"gain {S.shape} does not conform to cross covariance {cov_xu.shape}")
    cross = cov_xu @ S.T
    return symmetrize(cov_xx - cross - cross.T + S @ (_mat(cov_uhat) + _mat(cov_u)) @ S.T)


def signed_measure_cov(cov_xx, cov_uhat, cov_u):
    """Multilevel signed-measure combination ``C_xx - C_uhat + C_u`` (may be indefinite)."""
    cov_xx, cov_uhat, cov_u = _mat(cov_xx), _mat(cov_uhat), _mat(cov_u)
    if not cov_xx.shape == cov_uhat.shape == cov_u.shape:
        raise ShapeMismatch("signed-measure terms must share one shape")
    return cov_xx - cov_uhat + cov_u


@dataclass
class FidelityChain:
    """Gains ``S_1..S_L`` between consecutive fidelities and their running products."""

    gains: list
    accumulated: list = field(init=False)

    def __post_init__(self):
        self.gains = [_mat(g.S if isinstance(g, CvGain) else g) for g in self.gains]
        acc = []
        for g in self.gains:
            if acc and acc[-1].shape[1] != g.shape[0]:
                raise ShapeMismatch("gain dimensions do not chain")
            acc.append(g if not acc else acc[-1] @ g)
        self.accumulated = acc

    @classmethod
    def from_projections(cls, phis, factors=None):
        """Default chain ``S_l = phi_l / 2`` (overridable per level via ``factors``)."""
        factors = factors or [0.5] * len(phis)
        return cls([f * _mat(p) for f, p in zip(factors, phis)])

    def __len__(self):
        return len(self.gains)


def telescoping_total_variate(x_mean, diffs, chain):
    """``x - sum_l Sbar_l (uhat_l - u_l)`` for per-level mean differences."""
    if len(diffs) != len(chain):
        raise ShapeMismatch(f"{len(diffs)} differences for a chain of length {len(chain)}")
    z = np.array(x_mean, dtype=float, copy=True)
    for sbar, d in zip(chain.accumulated, diffs):
        z = z - sbar @ np.atleast_1d(np.asarray(d, dtype=float))
    return z


@dataclass(frozen=True)
class CostModel:
    C_x: float
    C_u: float
    N_x: int
    N_u: int

    def __post_init__(self):
        if min(self.C_x, self.C_u) < 0:
            raise ValueError("costs must be nonnegative")
        if self.N_x < 2 or self.N_u < 2:
            raise ValueError("member counts must be >= 2")


def estimator_cost(m):
    """Work of a two-fidelity estimator: ``N_x C_x + (N_x + N_u) C_u``."""
    return m.N_x * m.C_x + (m.N_x + m.N_u) * m.C_u


def effective_ensemble_size(sigma_x, sigma_z, sigma_su, n_x, n_u):
    """EnKF ensemble size matching the sampling error of a two-fidelity filter."""
    denom = n_u * sigma_z - sigma_su * (n_u - n_x)
    if not denom > 0:
        raise DegenerateVarianceBudget(f"nonpositive denominator {denom}")
    return n_x * n_u * sigma_x / denom


def cheaper_than_enkf(m, m_x):
    """True when the two-fidelity filter costs no more than an ``m_x``-member EnKF."""
    return m.C_u <= m.C_x * (m_x - m.N_x) / (m.N_x + m.N_u)
