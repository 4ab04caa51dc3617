"""INI experiment configuration with typed sections and strict key checking.

Every section maps onto a dataclass; unknown sections or keys, malformed
values and inconsistent combinations raise :class:`ConfigError`.  Lists are
comma-separated.  A ``scale`` of ``desk`` or ``paper`` picks grid, basis and
localization defaults before the file's own values are applied.
"""

import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .qge import DAY

FILTERS = ("enkf", "loc-enkf", "shr-enkf", "mlenkf", "mfenkf", "mfenkf-telescopic")
ROM_FILTERS = ("mlenkf", "mfenkf", "mfenkf-telescopic")


@dataclass
class ExperimentSection:
    scale: str = "desk"
    steps: int = 350
    spinup: int = 50
    runs: int = 3
    seed: int = 0
    output: str = "results"
    workers: int = 1
    record_timing: bool = False
    checkpoint_every: int = 0


@dataclass
class ModelSection:
    truth_nx: int = 127
    truth_ny: int = 255
    fom_nx: int = 31
    fom_ny: int = 63
    re: float = 450.0
    ro: float = 0.0036
    rtol: float = 1e-4
    atol: float = 1e-4
    poisson: str = "cholesky"
    truth_poisson: str = "cholesky"
    obs_count: int = 150
    obs_interval: float = DAY
    obs_variance: float = 1.0


@dataclass
class TruthSection:
    seed: int = 0
    spinup_time: float = 10.0
    relax_time: float = 0.5
    cache_dir: str = "cache"


@dataclass
class BasisSection:
    path: str = ""
    seed: int = 1
    spinup_time: float = 5.0
    snapshots: int = 200
    spacing: float = 0.05
    modes: int = 50


@dataclass
class FilterSection:
    kind: str = "mfenkf"
    n_x: int = 4
    n_u: typing.List[int] = field(default_factory=lambda: [40])
    r: typing.List[int] = field(default_factory=lambda: [25])
    alpha_x: float = 1.1
    alpha_u: typing.List[float] = field(default_factory=lambda: [1.1])
    noise_method: str = "i"
    noise_s: float = 1.0
    recenter: str = "total"
    localization_radius: float = 10.0
    localize_mf: bool = False
    initial_spread: float = 0.5


@dataclass
class SweepSection:
    n_x: typing.List[int] = field(default_factory=list)
    alpha_x: typing.List[float] = field(default_factory=list)
    r: typing.List[int] = field(default_factory=list)
    n_u: typing.List[int] = field(default_factory=list)
    alpha_u: typing.List[float] = field(default_factory=list)
    kind: typing.List[str] = field(default_factory=list)


SECTIONS = {
    "experiment": ExperimentSection,
    "model": ModelSection,
    "truth": TruthSection,
    "basis": BasisSection,
    "filter": FilterSection,
    "sweep": SweepSection,
}

SCALE_DEFAULTS = {
    "desk": {
        "model": dict(truth_nx=127, truth_ny=255, fom_nx=31, fom_ny=63),
        "basis": dict(snapshots=200, modes=50),
        "filter": dict(localization_radius=10.0),
    },
    "paper": {
        "model": dict(truth_nx=255, truth_ny=511, fom_nx=63, fom_ny=127),
        "basis": dict(snapshots=700, spacing=6.0 * (80.0 / 20.12) / 12.0, modes=100),
        "filter": dict(localization_radius=20.0, r=[50]),
    },
}


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    model: ModelSection = field(default_factory=ModelSection)
    truth: TruthSection = field(default_factory=TruthSection)
    basis: BasisSection = field(default_factory=BasisSection)
    filter: FilterSection = field(default_factory=FilterSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def validate(self):
        e, f, m = self.experiment, self.filter, self.model
        _choice("experiment.scale", e.scale, SCALE_DEFAULTS)
        _choice("filter.kind", f.kind, FILTERS)
        _choice("filter.noise_method", f.noise_method, ("i", "ii"))
        _choice("filter.recenter", f.recenter, ("total", "control"))
        _choice("model.poisson", m.poisson, ("cholesky", "dst"))
        _choice("model.truth_poisson", m.truth_poisson, ("cholesky", "dst"))
        if not e.steps > e.spinup >= 0:
            raise ConfigError("experiment.steps must exceed experiment.spinup")
        if e.runs < 1 or e.workers < 1 or e.checkpoint_every < 0:
            raise ConfigError("runs and workers must be positive")
        if f.n_x < 2:
            raise ConfigError("filter.n_x must be at least 2")
        if f.alpha_x < 1 or any(a < 1 for a in f.alpha_u):
            raise ConfigError("inflation factors must be >= 1")
        if f.noise_s <= 0 or f.initial_spread <= 0:
            raise ConfigError("filter.noise_s and filter.initial_spread must be positive")
        if f.localization_radius <= 0:
            raise ConfigError("filter.localization_radius must be positive")
        if min(m.truth_nx, m.truth_ny, m.fom_nx, m.fom_ny) < 3:
            raise ConfigError("grids need at least 3 interior points per axis")
        if m.obs_count < 1 or m.obs_count > m.fom_nx * m.fom_ny or m.obs_interval <= 0 or m.obs_variance <= 0:
            raise ConfigError("invalid observation schedule")
        levels = self.levels
        if f.kind in ROM_FILTERS:
            if levels < 1:
                raise ConfigError(f"{f.kind} needs at least one entry in filter.r")
            if f.kind != "mfenkf-telescopic" and levels != 1:
                raise ConfigError(f"{f.kind} takes a single reduced dimension")
            for name in ("n_u", "alpha_u"):
                if len(getattr(f, name)) != levels:
                    raise ConfigError(f"filter.{name} needs one value per reduced level ({levels})")
            if any(n < 2 for n in f.n_u):
                raise ConfigError("ancillary ensembles need at least 2 members")
            if any(r < 0 for r in f.r) or any(a <= b for a, b in zip(f.r, f.r[1:])):
                raise ConfigError("filter.r must be nonnegative and strictly decreasing")
            if max(f.r) > self.basis.modes:
                raise ConfigError("filter.r exceeds basis.modes")
            if f.kind == "mfenkf-telescopic" and f.noise_method == "i" and levels > 1:
                raise ConfigError("noise method i is defined for two fidelities only")
        if self.basis.snapshots < 2 or self.basis.spacing <= 0 or self.basis.modes < 1:
            raise ConfigError("invalid basis settings")
        if self.basis.modes > self.basis.snapshots:
            raise ConfigError("basis.modes cannot exceed basis.snapshots")
        return self

    @property
    def levels(self):
        return len(self.filter.r) if self.filter.kind in ROM_FILTERS else 0

    def to_dict(self):
        return dataclasses.asdict(self)


def _choice(name, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{name} = {value!r}; expected one of {', '.join(allowed)}")


def _convert(name, tp, raw):
    raw = raw.strip()
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typing.get_origin(tp) in (list, typing.List):
            (inner,) = typing.get_args(tp)
            return [_convert(name, inner, part) for part in raw.split(",") if part.strip()]
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse {name} = {raw!r}") from exc


def _apply(section_obj, values, section_name):
    hints = typing.get_type_hints(type(section_obj))
    known = {f.name for f in fields(section_obj)}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {section_name}.{key}")
        setattr(section_obj, key, _convert(f"{section_name}.{key}", hints[key], raw) if isinstance(raw, str) else raw)


def _parser():
    return configparser.ConfigParser(interpolation=None, default_section="__unused__")


def parse_config(text, overrides=None):
    """Build a validated config from INI ``text`` plus ``{"section.key": value}`` overrides."""
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
    file_values = {name: dict(cp[name]) for name in cp.sections()}
    flat = dict(overrides or {})
    scale = flat.get("experiment.scale", file_values.get("experiment", {}).get("scale", "desk")).strip()
    if scale not in SCALE_DEFAULTS:
        raise ConfigError(f"experiment.scale = {scale!r}; expected desk or paper")
    cfg = ExperimentConfig()
    for name, vals in SCALE_DEFAULTS[scale].items():
        _apply(getattr(cfg, name), vals, name)
    for name, vals in file_values.items():
        _apply(getattr(cfg, name), vals, name)
    for dotted, value in flat.items():
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        name, key = dotted.split(".", 1)
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        _apply(getattr(cfg, name), {key: value}, name)
    return cfg.validate()


def load_config(path, overrides=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, overrides)


def dump_config(cfg):
    """INI text that parses back to ``cfg``."""
    cp = _parser()
    for name in SECTIONS:
        sec = getattr(cfg, name)
        cp[name] = {f.name: _format(getattr(sec, f.name)) for f in fields(sec)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _format(v):
    if isinstance(v, list):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def with_overrides(cfg, overrides):
    """A re-validated copy of ``cfg`` with ``{"section.key": value}`` changes."""
    return parse_config(dump_config(cfg), overrides)
