"""Twin experiments: cached truth and basis, filter runs, sweeps and CSV output.

Protocol
--------
* Truth: a seeded small random vorticity field is spun up on the FOM grid,
  prolonged bilinearly to the truth grid and relaxed there; the truth is then
  integrated across the observation window and restricted (full weighting)
  to the FOM grid at every observation time.
* Observations: vorticity at ``obs_count`` equally spaced flat indices of the
  restricted truth plus ``N(0, obs_variance I)`` noise drawn from the truth
  seed, so every filter run sees the same data.
* Filter state: FOM streamfunction.  RMSE is measured on it.
* Basis: POD of FOM vorticity snapshots from an independent trajectory.
* Initial ensembles: restricted truth plus ``initial_spread`` times
  climatological anomalies (basis snapshots minus their mean).
"""

import csv
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .baselines import ShrinkageTarget, localized_sample_covariance, shrinkage_enkf_analysis
from .config import ROM_FILTERS, _format, dump_config, with_overrides
from .diagnostics import RankHistogram, rmse, spatiotemporal_rmse
from .ensemble import GaussianSampler, substream_seed
from .errors import ConfigError, MfenkfError
from .integrate import StepController
from .multifidelity import (
    MultifidelityEnsemble,
    NoiseMethod,
    TotalVariateTriple,
    ladder_analysis,
    ladder_forecast,
    save_checkpoint,
    total_variate_mean,
)
from .observations import LocalizationKernel, ObservationModel
from .projection import ProjectionPair
from .qge import (
    Grid2D,
    PoissonSolver,
    QgeModel,
    QgeParams,
    QgeState,
    equally_spaced_indices,
    prolong,
    restrict_to_fom,
)
from .rom import GalerkinRom, build_projection_pair, build_rom, collect_snapshots, load_snapshots

log = logging.getLogger(__name__)

CSV_COLUMNS = ("step", "time", "rmse", "kl_principal", "kl_control", "kl_ancillary", "wall_ms")
SUMMARY_COLUMNS = ("filter", "run", "seed", "n_x", "n_u", "r", "alpha_x", "alpha_u", "rmse", "status")

# substream keys under a run seed
_OBS_STREAM, _INIT_STREAM, _TIE_STREAM = 1, 2, 3


def _controller(cfg):
    # A diverging filter drives members to huge, stiff states; fail fast instead of crawling.
    return StepController(atol=cfg.model.atol, rtol=cfg.model.rtol, max_steps=200_000, max_abs=1e8)


def fom_grid(cfg):
    return Grid2D(cfg.model.fom_nx, cfg.model.fom_ny)


def truth_grid(cfg):
    return Grid2D(cfg.model.truth_nx, cfg.model.truth_ny)


def fom_model(cfg):
    g = fom_grid(cfg)
    return QgeModel(g, QgeParams(cfg.model.re, cfg.model.ro), PoissonSolver(g, cfg.model.poisson), _controller(cfg))


def _key(payload):
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _random_start(grid, seed, amplitude=1e-3):
    return amplitude * np.random.default_rng(seed).standard_normal(grid.shape)


@dataclass
class TruthRecord:
    """Restricted truth on the FOM grid at ``times[0..K]`` and noisy observations at ``times[1..K]``."""

    times: np.ndarray
    omega: np.ndarray
    psi: np.ndarray
    obs: np.ndarray
    obs_clean: np.ndarray
    indices: np.ndarray


def generate_truth(cfg, cache=True):
    """Truth trajectory for ``cfg`` (loaded from the cache directory when present)."""
    m, t = cfg.model, cfg.truth
    payload = {"model": dataclass_dict(m), "truth": {k: v for k, v in dataclass_dict(t).items() if k != "cache_dir"},
               "steps": cfg.experiment.steps}
    path = os.path.join(t.cache_dir, f"truth-{_key(payload)}.npz")
    if cache and os.path.exists(path):
        with np.load(path) as f:
            return TruthRecord(f["times"], f["omega"], f["psi"], f["obs"], f["obs_clean"], f["indices"])
    params = QgeParams(m.re, m.ro)
    fg, tg = fom_grid(cfg), truth_grid(cfg)
    ctl = _controller(cfg)
    coarse = QgeModel(fg, params, PoissonSolver(fg, m.poisson), ctl)
    fine = QgeModel(tg, params, PoissonSolver(tg, m.truth_poisson), ctl)
    log.info("truth spin-up: %.3g units on %s", t.spinup_time, fg.shape)
    state = coarse.integrate(QgeState(_random_start(fg, substream_seed(t.seed, 0)), 0.0), t.spinup_time)
    state = QgeState(prolong(state.omega, fg, tg), 0.0)
    log.info("truth relaxation: %.3g units on %s", t.relax_time, tg.shape)
    state = fine.integrate(state, t.relax_time)
    t0 = state.t
    steps = cfg.experiment.steps
    times = t0 + m.obs_interval * np.arange(steps + 1)
    omegas = [restrict_to_fom(state, tg, fg).omega.ravel()]
    for k in range(1, steps + 1):
        state = fine.integrate(state, times[k])
        omegas.append(restrict_to_fom(state, tg, fg).omega.ravel())
    omega = np.array(omegas)
    psi = coarse.solver.solve(omega.T).T
    idx = equally_spaced_indices(fg.n, m.obs_count)
    clean = omega[1:, idx]
    noise = GaussianSampler(np.sqrt(m.obs_variance) * np.eye(m.obs_count), substream_seed(t.seed, 1))
    obs = clean + noise.draw(steps).T
    rec = TruthRecord(times, omega, psi, obs, clean, idx)
    if cache:
        os.makedirs(t.cache_dir, exist_ok=True)
        np.savez(path, **rec.__dict__)
    return rec


def dataclass_dict(obj):
    return {k: v for k, v in obj.__dict__.items()}


def basis_path(cfg):
    if cfg.basis.path:
        return cfg.basis.path
    payload = {"model": dataclass_dict(cfg.model), "basis": {k: v for k, v in dataclass_dict(cfg.basis).items() if k != "path"}}
    return os.path.join(cfg.truth.cache_dir, f"basis-{_key(payload)}.npz")


def build_basis(cfg, path=None, force=False):
    """POD/Galerkin ROM from an independent FOM trajectory, archived at ``path``."""
    path = path or basis_path(cfg)
    if os.path.exists(path) and not force:
        return load_basis(cfg, path)
    b = cfg.basis
    model = fom_model(cfg)
    log.info("basis spin-up: %.3g units", b.spinup_time)
    state = model.integrate(QgeState(_random_start(model.grid, substream_seed(b.seed, 0)), 0.0), b.spinup_time)
    log.info("collecting %d snapshots every %.3g units", b.snapshots, b.spacing)
    snaps = collect_snapshots(model, state.omega, b.snapshots, b.spacing, t0=state.t)
    rom = build_rom(snaps, b.modes, model.params, model.solver)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    rom.save(path, snaps)
    rom.controller = _controller(cfg)
    return rom


def load_basis(cfg, path=None):
    path = path or basis_path(cfg)
    if not os.path.exists(path):
        raise ConfigError(f"basis archive {path} not found; run build-basis first")
    rom = GalerkinRom.load(path)
    if rom.grid.shape != fom_grid(cfg).shape:
        raise ConfigError(f"basis grid {rom.grid.shape} does not match FOM grid {fom_grid(cfg).shape}")
    need = max(cfg.filter.r) if cfg.levels else 0
    if rom.r < need:
        raise ConfigError(f"basis holds {rom.r} modes but r = {need} was requested")
    rom.controller = _controller(cfg)
    return rom


@dataclass
class Setup:
    """Everything shared by the runs of one configuration."""

    cfg: object
    truth: TruthRecord
    model: QgeModel
    obs: ObservationModel
    climatology: np.ndarray
    rom: GalerkinRom = None
    pairs: list = field(default_factory=list)
    roms: list = field(default_factory=list)
    target: ShrinkageTarget = None


def prepare(cfg, truth=None, rom=None):
    """Truth, observation operator, climatology and the reduced hierarchy for ``cfg``."""
    truth = truth or generate_truth(cfg)
    model = fom_model(cfg)
    g = model.grid
    idx = truth.indices
    gather = sp.csr_matrix((np.ones(idx.size), (np.arange(idx.size), idx)), shape=(idx.size, g.n))
    # Streamfunction responds nonlocally to a vorticity observation; taper in vorticity space.
    solver = model.solver
    obs = ObservationModel(cfg.model.obs_variance * np.eye(idx.size), linear_h=(gather @ solver.neg_lap).tocsr(),
                           state_coords=g.index_coords(), obs_coords=g.index_coords(idx),
                           local_space=(lambda a: solver.neg_lap @ a, solver.solve))
    rom = rom or build_basis(cfg)
    snaps = load_snapshots(basis_path(cfg))
    if snaps is None:
        raise ConfigError("basis archive carries no snapshots for the climatology")
    setup = Setup(cfg, truth, model, obs, model.solver.solve(snaps.snapshots), rom)
    f = cfg.filter
    if cfg.levels:
        top = build_projection_pair(rom.truncate(f.r[0]), model.solver)
        setup.pairs = [top] + [_selection_pair(a, b) for a, b in zip(f.r, f.r[1:])]
        setup.roms = [rom.truncate(r) for r in f.r]
    if f.kind == "shr-enkf":
        kernel = LocalizationKernel(f.localization_radius)
        c_omega = localized_sample_covariance(snaps.snapshots, g.index_coords(), kernel)
        c_psi = solver.solve(solver.solve(c_omega).T)
        setup.target = ShrinkageTarget(0.5 * (c_psi + c_psi.T), obs)
    return setup


def _selection_pair(r_hi, r_lo):
    """Nested POD coordinates: keep the first ``r_lo`` of ``r_hi`` coefficients."""
    return ProjectionPair(np.eye(r_hi)[:, :r_lo], phi_star=np.eye(r_hi)[:r_lo], orthonormalize=False)


def _initial_members(setup, base, count, rng):
    clim = setup.climatology
    anom = clim - clim.mean(axis=1, keepdims=True)
    cols = rng.choice(clim.shape[1], size=count, replace=count > clim.shape[1])
    return base[:, None] + setup.cfg.filter.initial_spread * anom[:, cols]


def initial_ensemble(setup, run_seed):
    """Principal and per-level ancillary ensembles at the first truth time."""
    cfg = setup.cfg
    base = setup.truth.psi[0]
    x = _initial_members(setup, base, cfg.filter.n_x, np.random.default_rng(substream_seed(run_seed, _INIT_STREAM, 0)))
    if not cfg.levels:
        return MultifidelityEnsemble(x, [], [], [])
    controls, ancillaries = [], []
    upper = x
    chain_star = None
    for lev, p in enumerate(setup.pairs):
        chain_star = p.phi_star if chain_star is None else p.phi_star @ chain_star
        controls.append(p.phi_star @ upper)
        rng = np.random.default_rng(substream_seed(run_seed, _INIT_STREAM, lev + 1))
        u = chain_star @ _initial_members(setup, base, cfg.filter.n_u[lev], rng)
        ancillaries.append(u)
        upper = u
    if cfg.levels == 1:
        return TotalVariateTriple(x, controls[0], ancillaries[0], setup.pairs[0])
    return MultifidelityEnsemble(x, controls, ancillaries, setup.pairs)


def _noise_method(cfg):
    f = cfg.filter
    if f.kind == "mfenkf-telescopic" and cfg.levels > 1:
        return NoiseMethod.method_ii(f.noise_s)
    return NoiseMethod.method_i() if f.noise_method == "i" else NoiseMethod.method_ii(f.noise_s)


def _kernel(cfg):
    f = cfg.filter
    if f.kind in ("loc-enkf", "mlenkf") or (f.kind.startswith("mfenkf") and f.localize_mf):
        return LocalizationKernel(f.localization_radius)
    return None


@dataclass
class RunResult:
    rows: list
    rmse: float
    histograms: dict
    seed: int
    status: str = "ok"


def run_filter(setup, run_seed, checkpoint_dir=None):
    """One filter run over the truth window; returns per-step rows and histograms."""
    cfg = setup.cfg
    f, e = cfg.filter, cfg.experiment
    truth = setup.truth
    obs = setup.obs
    method = _noise_method(cfg)
    kernel = _kernel(cfg)
    signed = f.kind == "mlenkf"
    inflation = [f.alpha_x] + list(f.alpha_u[: cfg.levels])
    chol_r = np.sqrt(cfg.model.obs_variance) * np.eye(obs.m)
    samplers = [GaussianSampler(chol_r, substream_seed(run_seed, _OBS_STREAM, lev)) for lev in range(cfg.levels + 1)]
    tie_rng = np.random.default_rng(substream_seed(run_seed, _TIE_STREAM))
    model = setup.model
    ctl = model.controller

    def fom(x, t0, t1):
        return model.propagate(x, t0, t1, ctl)

    roms = [lambda u, t0, t1, r=r: r.propagate(u, t0, t1) for r in setup.roms]
    ens = initial_ensemble(setup, run_seed)
    names = ["principal"] + (["control", "ancillary"] if cfg.levels else [])
    hists = {}
    rows, estimates = [], []
    obs_r = [obs.reduced(p) for p in ens.chain]
    for k in range(1, e.steps + 1):
        start = time.perf_counter()
        try:
            ens = ladder_forecast(ens, fom, roms, truth.times[k - 1], truth.times[k])
            y = truth.obs[k - 1]
            if f.kind == "shr-enkf":
                xa = shrinkage_enkf_analysis(ens.principal, obs, y, samplers[0], f.alpha_x, setup.target)
                ens = MultifidelityEnsemble(xa, [], [], [])
            else:
                ens = ladder_analysis(ens, obs, y, method, samplers, inflation, kernel,
                                      "total" if f.recenter == "total" else "control", signed=signed)
        except MfenkfError as exc:
            exc.args = (f"step {k}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        est = total_variate_mean(ens, signed) if cfg.levels else ens.principal.mean(axis=1)
        estimates.append(est)
        row = {"step": k, "time": truth.times[k], "rmse": rmse(est, truth.psi[k]),
               "kl_principal": None, "kl_control": None, "kl_ancillary": None, "wall_ms": None}
        if k > e.spinup:
            clean = truth.obs_clean[k - 1]
            groups = {"principal": obs.apply(ens.principal)}
            if cfg.levels:
                groups["control"] = obs_r[0].apply(ens.controls[0])
                groups["ancillary"] = obs_r[0].apply(ens.ancillaries[0])
            for name, vals in groups.items():
                h = hists.setdefault(name, RankHistogram(vals.shape[1]))
                h.tally(vals, clean, tie_rng)
                row[f"kl_{name}"] = h.kl_to_uniform()
        if e.record_timing:
            row["wall_ms"] = 1e3 * (time.perf_counter() - start)
        rows.append(row)
        if checkpoint_dir and e.checkpoint_every and k % e.checkpoint_every == 0:
            save_checkpoint(os.path.join(checkpoint_dir, f"checkpoint-{k:05d}.npz"), ens, k, samplers)
    score = spatiotemporal_rmse(estimates, truth.psi[1:], e.spinup)
    return RunResult(rows, score, hists, run_seed)


def run_seeds(master, runs):
    return [substream_seed(master, run) for run in range(runs)]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, rows, columns=CSV_COLUMNS):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _summary_row(cfg, run, result):
    f = cfg.filter
    return {"filter": "corrected-MLEnKF" if f.kind == "mlenkf" else f.kind, "run": run, "seed": result.seed,
            "n_x": f.n_x, "n_u": _format(f.n_u) if cfg.levels else "", "r": _format(f.r) if cfg.levels else "",
            "alpha_x": f.alpha_x, "alpha_u": _format(f.alpha_u) if cfg.levels else "",
            "rmse": result.rmse, "status": result.status}


def run_twin_experiment(cfg, output=None, setup=None, raise_errors=True):
    """All configured runs of one filter; writes ``run_<k>.csv`` and ``summary.csv``.

    Returns the list of :class:`RunResult` (failed runs carry ``rmse = nan``
    and an ``error:`` status when ``raise_errors`` is false).
    """
    setup = setup or prepare(cfg)
    output = output if output is not None else cfg.experiment.output
    if output:
        os.makedirs(output, exist_ok=True)
    results, summary = [], []
    for run, seed in enumerate(run_seeds(cfg.experiment.seed, cfg.experiment.runs)):
        try:
            res = run_filter(setup, seed, checkpoint_dir=output)
        except MfenkfError as exc:
            if raise_errors:
                raise
            res = RunResult([], float("nan"), {}, seed, f"error:{type(exc).__name__}")
        results.append(res)
        summary.append(_summary_row(cfg, run, res))
        if output and res.rows:
            write_rows(os.path.join(output, f"run_{run}.csv"), res.rows)
    if output:
        write_rows(os.path.join(output, "summary.csv"), summary, SUMMARY_COLUMNS)
    return results


SWEEP_KEYS = ("kind", "n_x", "alpha_x", "r", "n_u", "alpha_u")


def sweep_cells(cfg):
    """Cartesian product of the non-empty ``[sweep]`` lists, as override dicts."""
    axes = [(k, getattr(cfg.sweep, k)) for k in SWEEP_KEYS if getattr(cfg.sweep, k)]
    cells = [{}]
    for key, values in axes:
        cells = [dict(c, **{f"filter.{key}": _format(v)}) for c in cells for v in values]
    return cells


def _run_cell(args):
    text, overrides, seed, out = args
    from .config import parse_config

    try:
        cfg = parse_config(text, dict(overrides, **{"experiment.seed": str(seed)}))
        results = run_twin_experiment(cfg, out, raise_errors=False)
        vals = [r.rmse for r in results if r.status == "ok"]
        status = "ok" if len(vals) == len(results) else ";".join(sorted({r.status for r in results if r.status != "ok"}))
        return float(np.mean(vals)) if vals else float("nan"), status
    except MfenkfError as exc:
        return float("nan"), f"error:{type(exc).__name__}"


def sweep(cfg, output=None, workers=None):
    """Run every sweep cell (seed derived from the master seed and cell index).

    Writes ``cell_<i>/`` run files and an aggregate ``sweep.csv``; failing
    cells are recorded and the sweep continues.  Returns the aggregate rows.
    """
    output = output if output is not None else cfg.experiment.output
    workers = workers or cfg.experiment.workers
    cells = sweep_cells(cfg)
    for cell in cells:
        ccfg = with_overrides(cfg, cell)
        generate_truth(ccfg)
        build_basis(ccfg)
    text = dump_config(cfg)
    jobs = []
    for i, cell in enumerate(cells):
        seed = substream_seed(cfg.experiment.seed, i)
        out = os.path.join(output, f"cell_{i:03d}") if output else ""
        jobs.append((text, cell, seed, out))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell, jobs))
    else:
        outcomes = [_run_cell(j) for j in jobs]
    rows = []
    for i, ((_, cell, seed, _), (score, status)) in enumerate(zip(jobs, outcomes)):
        row = {"cell": i, "seed": seed}
        row.update({k: cell.get(f"filter.{k}", "") for k in SWEEP_KEYS})
        row.update({"rmse": score, "status": status})
        rows.append(row)
    if output:
        os.makedirs(output, exist_ok=True)
        write_rows(os.path.join(output, "sweep.csv"), rows, ("cell", "seed") + SWEEP_KEYS + ("rmse", "status"))
    return rows


def rank_histograms(cfg, output=None, setup=None):
    """Run once per seed and pool the post-spinup rank histograms of every ensemble."""
    results = run_twin_experiment(cfg, output, setup)
    pooled = {}
    for res in results:
        for name, h in res.histograms.items():
            acc = pooled.setdefault(name, RankHistogram(h.members))
            acc.add(np.repeat(np.arange(h.members + 1), h.bins))
    if output:
        rows = []
        for name, h in pooled.items():
            for b, count in enumerate(h.bins):
                rows.append({"ensemble": name, "rank": b, "count": int(count), "kl_uniform": h.kl_to_uniform()})
        write_rows(os.path.join(output, "rank_histograms.csv"), rows, ("ensemble", "rank", "count", "kl_uniform"))
    return pooled


def compare_variants(cfg, variants, log=None):
    """RMSE comparison of several filter settings on one shared truth and basis.

    ``variants`` is a sequence of ``(name, overrides)``; returns
    ``{name: [rmse per run]}`` with ``nan`` for runs that failed.
    """
    truth = generate_truth(cfg)
    rom = build_basis(cfg)
    scores = {}
    for name, overrides in variants:
        vcfg = with_overrides(cfg, overrides)
        start = time.perf_counter()
        results = run_twin_experiment(vcfg, "", prepare(vcfg, truth=truth, rom=rom), raise_errors=False)
        scores[name] = [r.rmse for r in results]
        if log:
            log(f"{name}: rmse {', '.join(f'{v:.4f}' for v in scores[name])} ({time.perf_counter() - start:.0f} s)")
    return scores
