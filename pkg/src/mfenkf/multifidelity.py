"""Multifidelity EnKF over principal, control and ancillary ensembles.

The total variate of an ``L``-level ladder is

    Z = X - sum_l 2^{-l} Phibar_l (Uhat_l - U_l),

where ``Uhat_l`` is paired member-for-member with ``U_{l-1}`` (``U_0 = X``)
and ``Phibar_l`` lifts level-``l`` coordinates to the full space.  ``L = 1``
is the two-fidelity filter.  Every analysis in the package (EnKF, localized
EnKF, MFEnKF, telescopic MFEnKF and the signed-measure MLEnKF) runs through
:func:`ladder_analysis`, so degenerate ladders reproduce the plain filters
bit for bit.
"""

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .ensemble import anomalies, as_ensemble, assemble, empirical_mean, inflate
from .errors import ConfigError, DivergedAnalysis, ModelBlowUp, NumericalDivergence, ShapeMismatch
from .observations import kalman_gain
from .projection import ProjectionPair, chain_pairs


class NoiseKind(str, Enum):
    METHOD_I = "method-i"
    METHOD_II = "method-ii"


@dataclass(frozen=True)
class NoiseMethod:
    """How observation perturbations are shared between the variates.

    Method (i) uses ``eta_uhat = eta_x ~ N(0, R)`` and ``eta_u ~ N(0, 3R)``
    so the total variate sees ``R``.  Method (ii) uses ``eta_uhat = s eta_x``
    and ``eta_u ~ N(0, s^2 R)``, which gives ``(1 - s + s^2/2) R``.
    """

    kind: NoiseKind = NoiseKind.METHOD_I
    s: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not self.s > 0:
            raise ConfigError("noise scale s must be positive")

    @classmethod
    def method_i(cls):
        return cls(NoiseKind.METHOD_I)

    @classmethod
    def method_ii(cls, s=1.0):
        return cls(NoiseKind.METHOD_II, s)

    def total_scale(self, levels=1):
        """Factor ``c`` with ``Cov(eta_Z) = c R`` for a ladder of ``levels``."""
        if levels == 0:
            return 1.0
        if self.kind is NoiseKind.METHOD_I:
            if levels != 1:
                raise ConfigError("method (i) is defined for two fidelities only")
            return 1.0
        s = self.s
        c = (1.0 - 0.5 * s) ** 2
        for lev in range(1, levels):
            c += (2.0**-lev - 2.0 ** (-lev - 1) * s) ** 2 * s ** (2 * lev)
        return c + 4.0**-levels * s ** (2 * levels)


@dataclass
class MultifidelityEnsemble:
    """Principal ensemble plus one (control, ancillary) pair per level.

    ``pairs[l]`` maps level-``l+1`` coordinates to level-``l`` coordinates
    (level 0 is the full space); ``controls[l]`` has as many members as the
    ensemble one level up.
    """

    principal: np.ndarray
    controls: list
    ancillaries: list
    pairs: list
    chain: list = field(init=False, repr=False)

    def __post_init__(self):
        self.principal = as_ensemble(self.principal)
        self.controls = [as_ensemble(c) for c in self.controls]
        self.ancillaries = [as_ensemble(u) for u in self.ancillaries]
        if not len(self.controls) == len(self.ancillaries) == len(self.pairs):
            raise ShapeMismatch("one control, ancillary and pair per level required")
        upper = self.principal
        for lev, (p, c, u) in enumerate(zip(self.pairs, self.controls, self.ancillaries)):
            if p.n != upper.shape[0]:
                raise ShapeMismatch(f"level {lev + 1} pair expects dimension {p.n}, got {upper.shape[0]}")
            if c.shape != (p.r, upper.shape[1]):
                raise ShapeMismatch(f"control {lev + 1} has shape {c.shape}, expected {(p.r, upper.shape[1])}")
            if u.shape[0] != p.r:
                raise ShapeMismatch(f"ancillary {lev + 1} has {u.shape[0]} rows, expected {p.r}")
            upper = u
        self.chain = chain_pairs(self.pairs)

    @property
    def levels(self):
        return len(self.pairs)

    def replace(self, principal, controls, ancillaries):
        return type(self).from_levels(principal, controls, ancillaries, self.pairs)

    @classmethod
    def from_levels(cls, principal, controls, ancillaries, pairs):
        return MultifidelityEnsemble(principal, controls, ancillaries, pairs)


class TotalVariateTriple(MultifidelityEnsemble):
    """Two-fidelity (principal, control, ancillary) ensembles sharing one pair."""

    def __init__(self, principal, control, ancillary, proj):
        super().__init__(principal, [control], [ancillary], [proj])

    @property
    def control(self):
        return self.controls[0]

    @property
    def ancillary(self):
        return self.ancillaries[0]

    @property
    def proj(self):
        return self.pairs[0]

    @classmethod
    def from_levels(cls, principal, controls, ancillaries, pairs):
        return cls(principal, controls[0], ancillaries[0], pairs[0])


@dataclass
class FidelityLadder:
    """Projection pairs, reduced propagators and ancillary sizes per level."""

    pairs: list
    models: list
    sizes: list

    def __post_init__(self):
        if not len(self.pairs) == len(self.models) == len(self.sizes):
            raise ShapeMismatch("ladder lists must share one length")
        for lev in range(1, len(self.pairs)):
            if self.pairs[lev].n != self.pairs[lev - 1].r or not self.pairs[lev].r < self.pairs[lev].n:
                raise ShapeMismatch(f"dimension chain broken at level {lev + 1}")

    @property
    def levels(self):
        return len(self.pairs)


def level_weights(levels, signed=False):
    """Control-variate weight of each level: ``2^{-l}``, or 1 for the signed measure."""
    return [1.0 if signed else 2.0 ** -(lev + 1) for lev in range(levels)]


def total_variate_mean(ens, signed=False):
    """``mean(X) - sum_l w_l Phibar_l (mean(Uhat_l) - mean(U_l))``."""
    z = empirical_mean(ens.principal)
    for w, p, c, u in zip(level_weights(ens.levels, signed), ens.chain, ens.controls, ens.ancillaries):
        z = z - w * (p.phi @ (empirical_mean(c) - empirical_mean(u)))
    return z


def total_variate_ensemble(triple):
    """Members ``X_k - (1/2) Phi (Uhat_k - U_k)`` using the first N_x ancillary members."""
    n_x = triple.principal.shape[1]
    u = triple.ancillaries[0]
    if u.shape[1] < n_x:
        raise ShapeMismatch("need at least as many ancillary as principal members")
    return triple.principal - 0.5 * (triple.chain[0].phi @ (triple.controls[0] - u[:, :n_x]))


def propagate_members(model, ens, t0, t1):
    """Batch-propagate columns; on failure rerun members one by one to name the culprits."""
    if ens.shape[0] == 0:
        return ens.copy()
    try:
        out = model(ens, t0, t1)
        if np.all(np.isfinite(out)):
            return out
    except NumericalDivergence:
        pass
    bad = []
    for k in range(ens.shape[1]):
        try:
            col = model(ens[:, k:k + 1], t0, t1)
            if not np.all(np.isfinite(col)):
                bad.append(k)
        except NumericalDivergence:
            bad.append(k)
    raise ModelBlowUp(bad or list(range(ens.shape[1])))


def ladder_forecast(ens, fom, roms, t0, t1):
    """Reset controls to projections of the level above, then propagate every ensemble.

    ``fom`` and each ``roms[l]`` are callables ``(columns, t0, t1) -> columns``.
    Each level's control and ancillary members share one ROM batch.
    """
    if len(roms) != ens.levels:
        raise ShapeMismatch(f"{len(roms)} reduced models for {ens.levels} levels")
    controls = []
    upper = ens.principal
    for p in ens.pairs:
        controls.append(p.phi_star @ upper)
        upper = ens.ancillaries[len(controls) - 1]
    principal = propagate_members(fom, ens.principal, t0, t1)
    new_c, new_a = [], []
    for rom, c, u in zip(roms, controls, ens.ancillaries):
        both = propagate_members(rom, np.hstack([c, u]), t0, t1)
        new_c.append(both[:, :c.shape[1]])
        new_a.append(both[:, c.shape[1]:])
    return ens.replace(principal, new_c, new_a)


def mf_forecast(triple, fom, rom, t0=0.0, t1=1.0):
    """Two-fidelity forecast: ``Uhat := Phi* X``, then FOM for X and ROM for Uhat, U."""
    return ladder_forecast(triple, fom, [rom], t0, t1)


def telescopic_forecast(ens, ladder, fom, t0, t1):
    return ladder_forecast(ens, fom, ladder.models, t0, t1)


def _draws(sampler, count, scale=1.0):
    d = sampler.draw(count)
    return d if scale == 1.0 else scale * d


def perturb_observations(method, samplers, counts, signed=False):
    """Observation perturbations for the principal and every level.

    ``samplers[0]`` feeds the principal stream and ``samplers[l]`` the level-l
    ancillary stream; all must draw ``N(0, R)``.  ``counts = [N_x, N_1, ...]``.
    Returns ``(eta_x, [eta_uhat_l], [eta_u_l])``.
    """
    levels = len(counts) - 1
    eta_x = _draws(samplers[0], counts[0])
    if levels == 0:
        return eta_x, [], []
    if signed:
        eta_u = [_draws(samplers[lev], counts[lev]) for lev in range(1, levels + 1)]
        uhat = [eta_x] + eta_u[:-1]
        return eta_x, uhat, eta_u
    if method.kind is NoiseKind.METHOD_I:
        if levels != 1:
            raise ConfigError("method (i) is defined for two fidelities only")
        return eta_x, [eta_x], [_draws(samplers[1], counts[1], np.sqrt(3.0))]
    s = method.s
    eta_u = [_draws(samplers[lev], counts[lev], s**lev) for lev in range(1, levels + 1)]
    uhat = [s * e for e in [eta_x] + eta_u[:-1]]
    return eta_x, uhat, eta_u


def total_noise(eta_x, eta_uhat, eta_u, signed=False):
    """Per-sample total-variate noise ``eta_x - sum w (eta_uhat - eta_u)`` (two fidelities)."""
    w = level_weights(1, signed)[0]
    return eta_x - w * eta_uhat[0] + w * eta_u[0]


def indirect_observation(ens, obs, inflation=None):
    """Observation-space images of every ensemble and the combined mean.

    Returns ``(hx, [h_uhat_l], [h_u_l], mean)`` where the mean is
    ``mean H(X) - sum_l w_l (mean H_l(Uhat_l) - mean H_l(U_l))``.
    """
    parts = _observed(ens, obs, inflation or [1.0] * (ens.levels + 1))
    return parts["hx"], parts["hc"], parts["hu"], parts["hbar"]


def _observed(ens, obs, inflation, signed=False):
    w = level_weights(ens.levels, signed)
    xm = empirical_mean(ens.principal)
    ax = inflate(anomalies(ens.principal), inflation[0])
    hx = obs.apply(assemble(xm, ax))
    cm = [empirical_mean(c) for c in ens.controls]
    ca = [inflate(anomalies(c), inflation[lev]) for lev, c in enumerate(ens.controls)]
    um = [empirical_mean(u) for u in ens.ancillaries]
    ua = [inflate(anomalies(u), inflation[lev + 1]) for lev, u in enumerate(ens.ancillaries)]
    obs_r = [obs.reduced(p) for p in ens.chain]
    hc = [o.apply(assemble(m, a)) for o, m, a in zip(obs_r, cm, ca)]
    hu = [o.apply(assemble(m, a)) for o, m, a in zip(obs_r, um, ua)]
    hbar = empirical_mean(hx)
    for wl, c, u in zip(w, hc, hu):
        hbar = hbar - wl * (empirical_mean(c) - empirical_mean(u))
    return dict(w=w, xm=xm, ax=ax, cm=cm, ca=ca, um=um, ua=ua, hx=hx, hc=hc, hu=hu, hbar=hbar)


def _groups(ens, parts):
    """State and observation anomalies of each independent sample group."""
    w, chain = parts["w"], ens.chain
    hxa = anomalies(parts["hx"])
    hca = [anomalies(h) for h in parts["hc"]]
    hua = [anomalies(h) for h in parts["hu"]]
    groups = []
    if ens.levels == 0:
        return [(parts["ax"], hxa)], hxa, hua
    z = parts["ax"] - w[0] * (chain[0].phi @ parts["ca"][0])
    h = hxa - w[0] * hca[0]
    groups.append((z, h))
    for lev in range(ens.levels):
        z = w[lev] * (chain[lev].phi @ parts["ua"][lev])
        h = w[lev] * hua[lev]
        if lev + 1 < ens.levels:
            z = z - w[lev + 1] * (chain[lev + 1].phi @ parts["ca"][lev + 1])
            h = h - w[lev + 1] * hca[lev + 1]
        groups.append((z, h))
    return groups, hxa, hua


def _signed_moments(ens, parts):
    """Signed-measure ``Cov(X) - Phi Cov(Uhat) Phi^T + Phi Cov(U) Phi^T`` blocks."""
    hxa = anomalies(parts["hx"])
    hca = [anomalies(h) for h in parts["hc"]]
    hua = [anomalies(h) for h in parts["hu"]]
    cross = parts["ax"] @ hxa.T
    innov = hxa @ hxa.T
    for lev, p in enumerate(ens.chain):
        cross = cross + p.phi @ (parts["ua"][lev] @ hua[lev].T - parts["ca"][lev] @ hca[lev].T)
        innov = innov + (hua[lev] @ hua[lev].T - hca[lev] @ hca[lev].T)
    return cross, innov, hxa, hua


def mf_gain(groups, cov_obs_z, kernel_blocks=None, indefinite_ok=False, local_space=None):
    """``Cov(Z, Hbar) (Cov(Hbar) + R_Z)^{-1}`` from per-group anomaly pairs."""
    cross = sum((z @ h.T for z, h in groups[1:]), groups[0][0] @ groups[0][1].T)
    innov = sum((h @ h.T for _, h in groups[1:]), groups[0][1] @ groups[0][1].T)
    return _localized_gain(cross, innov, cov_obs_z, kernel_blocks, indefinite_ok, local_space)


def _localized_gain(cross, innov, cov_obs_z, kernel_blocks, indefinite_ok, local_space=None):
    if kernel_blocks is not None:
        if local_space is not None:
            to_local, from_local = local_space
            cross = from_local(kernel_blocks[0] * to_local(cross))
        else:
            cross = kernel_blocks[0] * cross
        innov = kernel_blocks[1] * innov
    return kalman_gain(cross, innov, cov_obs_z, indefinite_ok=indefinite_ok)


RECENTER_TOTAL = "total"
RECENTER_CONTROL = "control"


def ladder_analysis(ens, obs, y, method, samplers, inflation, kernel=None, recenter=RECENTER_TOTAL,
                    signed=False):
    """Perturbed-observation analysis of a multifidelity ensemble.

    Parameters
    ----------
    ens : MultifidelityEnsemble
    obs : ObservationModel
        Full-space operator; level operators are ``H(Phibar_l u)``.
    y : (m,) array
    method : NoiseMethod
    samplers : list of GaussianSampler
        ``N(0, R)`` streams, one for the principal and one per level.
    inflation : list of float
        ``inflation[0]`` scales principal and first-level control anomalies,
        ``inflation[l]`` the level-l ancillary (and level l+1 control) anomalies.
    kernel : LocalizationKernel, optional
        Tapers the cross and innovation covariances.
    recenter : {"total", "control"}
        ``"total"`` re-centers every mean on the total-variate analysis mean;
        ``"control"`` updates principal and ancillary means separately and
        moves the control mean onto the ancillary mean.
    signed : bool
        Signed-measure covariance with unit level weights (MLEnKF baseline).
    """
    levels = ens.levels
    if len(inflation) != levels + 1 or len(samplers) < levels + 1:
        raise ShapeMismatch("need one inflation factor and one sampler per ensemble level")
    if recenter not in (RECENTER_TOTAL, RECENTER_CONTROL):
        raise ConfigError(f"unknown re-centering {recenter!r}")
    y = np.asarray(y, dtype=float)
    parts = _observed(ens, obs, inflation, signed)
    blocks = kernel.blocks(obs) if kernel is not None else None
    space = obs.local_space if kernel is not None else None
    if signed:
        cross, innov, hxa, hua = _signed_moments(ens, parts)
        gain = _localized_gain(cross, innov, obs.cov_obs, blocks, True, space)
    else:
        groups, hxa, hua = _groups(ens, parts)
        scale = method.total_scale(levels)
        cov_z = obs.cov_obs if scale == 1.0 else scale * obs.cov_obs
        gain = mf_gain(groups, cov_z, blocks, local_space=space)

    counts = [ens.principal.shape[1]] + [u.shape[1] for u in ens.ancillaries]
    eta_x, _, eta_u = perturb_observations(method, samplers, counts, signed)

    w, chain = parts["w"], ens.chain
    z_mean = parts["xm"]
    for wl, p, c, u in zip(w, chain, parts["cm"], parts["um"]):
        z_mean = z_mean - wl * (p.phi @ (c - u))
    z_mean = z_mean - gain @ (parts["hbar"] - y)

    ax = parts["ax"] - gain @ (hxa - anomalies(eta_x))
    ua = [a - p.phi_star @ (gain @ (h - anomalies(e)))
          for a, p, h, e in zip(parts["ua"], chain, hua, eta_u)]

    if recenter == RECENTER_TOTAL:
        x_mean = z_mean
        u_means = [p.phi_star @ z_mean for p in chain]
    else:
        x_mean = parts["xm"] - gain @ (empirical_mean(parts["hx"]) - y)
        u_means = [m - p.phi_star @ (gain @ (empirical_mean(h) - y))
                   for m, p, h in zip(parts["um"], chain, parts["hu"])]

    principal = assemble(x_mean, ax)
    ancillaries = [assemble(m, a) for m, a in zip(u_means, ua)]
    controls = []
    upper_a = ax
    for lev, p in enumerate(ens.pairs):
        controls.append(assemble(u_means[lev], p.phi_star @ upper_a))
        upper_a = ua[lev]
    out = ens.replace(principal, controls, ancillaries)
    for e in [principal] + controls + ancillaries:
        if not np.all(np.isfinite(e)):
            raise DivergedAnalysis("non-finite member after analysis")
    return out


def mf_analysis(triple, obs, y, method, samplers, inflations=(1.0, 1.0), kernel=None,
                recenter=RECENTER_TOTAL):
    """Two-fidelity MFEnKF analysis (``inflations = (alpha_x, alpha_u)``)."""
    return ladder_analysis(triple, obs, y, method, samplers, list(inflations), kernel, recenter)


def telescopic_analysis(ens, obs, y, samplers, inflation, method=None, kernel=None,
                        recenter=RECENTER_TOTAL):
    """Telescopic MFEnKF analysis; method (ii) with ``s = 1`` unless given."""
    return ladder_analysis(ens, obs, y, method or NoiseMethod.method_ii(1.0), samplers, list(inflation),
                           kernel, recenter)


def mean_consistency_error(ens):
    """Largest violation of ``mean(Uhat_l) = Phibar_l* mean(X) = mean(U_l)``."""
    xm = empirical_mean(ens.principal)
    err = 0.0
    for p, c, u in zip(ens.chain, ens.controls, ens.ancillaries):
        target = p.phi_star @ xm
        scale = max(1.0, float(np.abs(target).max(initial=0.0)))
        err = max(err, float(np.abs(empirical_mean(c) - target).max(initial=0.0)) / scale,
                  float(np.abs(empirical_mean(u) - target).max(initial=0.0)) / scale)
    return err


def save_checkpoint(path, ens, step, samplers):
    """All ensembles, pairs, the step index and sampler states in one ``.npz``."""
    arrays = {"principal": ens.principal, "step": np.array(step, dtype=np.int64),
              "levels": np.array(ens.levels, dtype=np.int64),
              "rng": np.array(json.dumps([s.get_state() for s in samplers]))}
    for lev in range(ens.levels):
        arrays[f"control_{lev}"] = ens.controls[lev]
        arrays[f"ancillary_{lev}"] = ens.ancillaries[lev]
        arrays[f"phi_{lev}"] = ens.pairs[lev].phi
        arrays[f"phi_star_{lev}"] = ens.pairs[lev].phi_star
    np.savez(path, **arrays)


def load_checkpoint(path, samplers=None):
    """Inverse of :func:`save_checkpoint`; restores sampler states in place when given."""
    with np.load(path) as f:
        levels = int(f["levels"])
        pairs = [ProjectionPair(f[f"phi_{lev}"], phi_star=f[f"phi_star_{lev}"], orthonormalize=False)
                 for lev in range(levels)]
        ens = MultifidelityEnsemble(f["principal"], [f[f"control_{lev}"] for lev in range(levels)],
                                    [f[f"ancillary_{lev}"] for lev in range(levels)], pairs)
        if levels == 1:
            ens = TotalVariateTriple(ens.principal, ens.controls[0], ens.ancillaries[0], pairs[0])
        step = int(f["step"])
        states = json.loads(str(f["rng"]))
    if samplers is not None:
        for s, st in zip(samplers, states):
            s.set_state(st)
    return ens, step
