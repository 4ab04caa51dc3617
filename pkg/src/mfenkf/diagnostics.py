"""Analysis RMSE, rank histograms and Kullback-Leibler divergence."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch, UnsupportedBin


def spatiotemporal_rmse(estimates, truths, spinup=0):
    """Root-mean-square error over every component of every post-spinup time."""
    est = [np.asarray(e, dtype=float).ravel() for e in estimates]
    tru = [np.asarray(t, dtype=float).ravel() for t in truths]
    if len(est) != len(tru):
        raise ShapeMismatch(f"{len(est)} estimates for {len(tru)} truths")
    if not 0 <= spinup < len(est):
        raise ValueError(f"spinup {spinup} leaves nothing to score out of {len(est)} times")
    sq, count = 0.0, 0
    for e, t in zip(est[spinup:], tru[spinup:]):
        if e.shape != t.shape:
            raise ShapeMismatch(f"estimate {e.shape} vs truth {t.shape}")
        sq += float(np.sum((e - t) ** 2))
        count += e.size
    return float(np.sqrt(sq / count))


def rmse(estimate, truth):
    d = np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean(d**2)))


def rank_tally(values, truth, rng=None):
    """Number of members below ``truth``; ties are placed uniformly at random."""
    v = np.asarray(values, dtype=float).ravel()
    below = int(np.sum(v < truth))
    ties = int(np.sum(v == truth))
    if ties:
        rng = rng if rng is not None else np.random.default_rng()
        below += int(rng.integers(0, ties + 1))
    return below


def rank_tallies(ensemble, truth, rng=None):
    """Vectorized ranks for every row of an ``(m, N)`` ensemble against ``truth (m,)``."""
    e = np.asarray(ensemble, dtype=float)
    t = np.asarray(truth, dtype=float)[:, None]
    below = np.sum(e < t, axis=1)
    ties = np.sum(e == t, axis=1)
    if ties.any():
        rng = rng if rng is not None else np.random.default_rng()
        below = below + np.floor(rng.random(ties.shape) * (ties + 1)).astype(int)
    return below


@dataclass
class RankHistogram:
    """Counts over the ``N + 1`` possible ranks of an ``N``-member ensemble."""

    members: int
    bins: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.members < 1:
            raise ValueError("need at least one member")
        if self.bins is None:
            self.bins = np.zeros(self.members + 1, dtype=np.int64)
        elif len(self.bins) != self.members + 1:
            raise ShapeMismatch("histogram needs N + 1 bins")

    @property
    def total(self):
        return int(self.bins.sum())

    def add(self, ranks):
        ranks = np.atleast_1d(np.asarray(ranks, dtype=np.int64))
        if ranks.size and (ranks.min() < 0 or ranks.max() > self.members):
            raise ValueError("rank out of range")
        self.bins += np.bincount(ranks, minlength=self.members + 1)
        return self

    def tally(self, ensemble, truth, rng=None):
        return self.add(rank_tallies(ensemble, truth, rng))

    def frequencies(self, smoothing=1.0):
        """Add-``smoothing`` (Laplace) normalized frequencies."""
        b = self.bins + smoothing
        return b / b.sum()

    def kl_to_uniform(self, smoothing=1.0):
        u = np.full(self.members + 1, 1.0 / (self.members + 1))
        return kl_divergence(self.frequencies(smoothing), u)


def kl_divergence(p, q):
    """``sum p log(p / q)`` in nats, with ``0 log 0 = 0``.

    Histograms are normalized first.  A bin where ``q`` is zero but ``p`` is
    not raises :class:`UnsupportedBin`.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ShapeMismatch(f"histograms of shape {p.shape} and {q.shape}")
    if np.any(p < 0) or np.any(q < 0) or p.sum() <= 0 or q.sum() <= 0:
        raise ValueError("histograms must be nonnegative and nonempty")
    p = p / p.sum()
    q = q / q.sum()
    support = p > 0
    if np.any(q[support] == 0):
        raise UnsupportedBin("q vanishes where p has mass")
    return float(max(0.0, np.sum(p[support] * np.log(p[support] / q[support]))))
