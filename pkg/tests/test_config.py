import pytest

from mfenkf.config import dump_config, load_config, parse_config, with_overrides
from mfenkf.errors import ConfigError

BASE = """
[experiment]
steps = 20
spinup = 5
[filter]
kind = mfenkf
n_u = 30
r = 10
alpha_u = 1.05
"""


def test_parse_defaults_and_values():
    cfg = parse_config(BASE)
    assert cfg.experiment.steps == 20 and cfg.filter.n_u == [30] and cfg.filter.alpha_u == [1.05]
    assert (cfg.model.fom_nx, cfg.model.fom_ny) == (31, 63)
    assert cfg.levels == 1


def test_paper_scale_defaults():
    cfg = parse_config("[experiment]\nscale = paper\n[filter]\nkind = enkf\n")
    assert (cfg.model.truth_nx, cfg.model.truth_ny, cfg.model.fom_nx) == (255, 511, 63)
    assert cfg.basis.modes == 100 and cfg.filter.localization_radius == 20.0


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n",
    "[filter]\nfoo = 1\n",
    "[filter]\nn_x = many\n",
    "[filter]\nkind = particle\n",
    "[experiment]\nsteps = 5\nspinup = 5\n",
    "[filter]\nalpha_x = 0.9\n",
    "[filter]\nkind = mfenkf-telescopic\nr = 10, 20\nn_u = 10, 20\nalpha_u = 1, 1\n",
    "[filter]\nkind = mfenkf\nr = 10, 5\nn_u = 10, 20\nalpha_u = 1, 1\n",
    "[filter]\nkind = mfenkf-telescopic\nr = 10, 5\nn_u = 10\nalpha_u = 1, 1\n",
    "[filter]\nr = 60\n",
    "[experiment]\nscale = huge\n",
    "[filter]\nlocalize_mf = maybe\n",
    "not an ini file",
])
def test_invalid_configs_raise(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_dump_round_trip():
    cfg = parse_config(BASE + "[sweep]\nalpha_x = 1.0, 1.1\n")
    again = parse_config(dump_config(cfg))
    assert again == cfg


def test_overrides_win_over_file():
    cfg = parse_config(BASE, {"experiment.seed": "9", "filter.r": "4"})
    assert cfg.experiment.seed == 9 and cfg.filter.r == [4]
    tweaked = with_overrides(cfg, {"filter.kind": "enkf"})
    assert tweaked.filter.kind == "enkf" and cfg.filter.kind == "mfenkf"
    with pytest.raises(ConfigError):
        parse_config(BASE, {"seed": "1"})
    with pytest.raises(ConfigError):
        parse_config(BASE, {"nowhere.seed": "1"})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")
