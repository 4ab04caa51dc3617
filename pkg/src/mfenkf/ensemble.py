"""Ensemble moments, anomalies, inflation and seeded Gaussian sampling.

Ensembles are plain ``(n, N)`` arrays: one column per member.  Anomalies carry
the ``1/sqrt(N - 1)`` scaling so that ``A @ A.T`` is the unbiased sample
covariance with no further factor.
"""

import json

import numpy as np

from .errors import EmptyEnsemble, InsufficientMembers, InvalidInflation, ShapeMismatch
from .linalg import cholesky_jittered


def as_ensemble(ens):
    ens = np.asarray(ens, dtype=float)
    if ens.ndim == 1:
        ens = ens[:, None]
    if ens.ndim != 2:
        raise ShapeMismatch(f"ensemble must be 2-D (n, N), got shape {ens.shape}")
    return ens


def empirical_mean(ens):
    """Column average of an ``(n, N)`` ensemble."""
    ens = as_ensemble(ens)
    if ens.shape[1] == 0:
        raise EmptyEnsemble("ensemble has no members")
    return ens.mean(axis=1)


def anomalies(ens):
    """Scaled anomalies ``(E - mean 1^T) / sqrt(N - 1)``."""
    ens = as_ensemble(ens)
    n_mem = ens.shape[1]
    if n_mem < 2:
        raise InsufficientMembers(f"need at least 2 members, got {n_mem}")
    return (ens - ens.mean(axis=1, keepdims=True)) / np.sqrt(n_mem - 1)


def empirical_cov(a, b=None):
    """Empirical (cross-)covariance ``A_a @ A_b.T`` from scaled anomalies."""
    a = as_ensemble(a)
    b = a if b is None else as_ensemble(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"member counts differ: {a.shape[1]} vs {b.shape[1]}")
    return a @ b.T


def inflate(a, alpha):
    """Multiplicative inflation of scaled anomalies."""
    if not alpha >= 1.0:
        raise InvalidInflation(f"inflation factor must be >= 1, got {alpha}")
    return alpha * np.asarray(a, dtype=float)


def assemble(mean, anom):
    """Inverse of (mean, anomalies): ``mean 1^T + sqrt(N - 1) A``."""
    anom = as_ensemble(anom)
    return np.asarray(mean, dtype=float)[:, None] + np.sqrt(anom.shape[1] - 1) * anom


def substream_seed(master_seed, *key):
    """Deterministic 64-bit seed for the substream identified by ``key``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class GaussianSampler:
    """Seeded source of ``N(0, L L^T)`` draws.

    Parameters
    ----------
    factor : array_like
        Lower-triangular covariance factor ``L`` (``m x m``).  Use
        :meth:`from_covariance` to build it from a covariance matrix.
    seed : int
        64-bit seed; equal seeds give bit-identical streams.

    Notes
    -----
    A sampler is mutable, single-owner state.  Independent streams for
    different ensembles come from :meth:`spawn`.
    """

    def __init__(self, factor, seed=0):
        self.factor = np.atleast_2d(np.asarray(factor, dtype=float))
        self.seed = int(seed)
        self._rng = np.random.Generator(np.random.PCG64(self.seed))

    @classmethod
    def from_covariance(cls, cov, seed=0):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls(cholesky_jittered(cov, jitter=1e-12), seed=seed)

    @property
    def dim(self):
        return self.factor.shape[0]

    def standard(self, count):
        """``(m, count)`` i.i.d. standard normal draws."""
        return self._rng.standard_normal((count, self.dim)).T

    def draw(self, count):
        if count < 1:
            raise ValueError("count must be >= 1")
        return self.factor @ self.standard(count)

    def spawn(self, *key):
        """A new sampler with the same factor on an independent substream."""
        return GaussianSampler(self.factor, substream_seed(self.seed, *key))

    @property
    def rng(self):
        return self._rng

    def get_state(self):
        return json.dumps(self._rng.bit_generator.state)

    def set_state(self, state):
        self._rng.bit_generator.state = json.loads(state)


def sample_gaussian(sampler, count):
    """Draw ``count`` columns from the sampler's Gaussian."""
    return sampler.draw(count)
