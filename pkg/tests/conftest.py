import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Filled by test_acceptance; printed once at the end of the session.
ACCEPTANCE_LINES = {}

TINY_INI = """
[experiment]
steps = 8
spinup = 2
runs = 2
seed = 7
output = {out}

[model]
truth_nx = 15
truth_ny = 31
fom_nx = 7
fom_ny = 15
obs_count = 10

[truth]
spinup_time = 1.0
relax_time = 0.1
cache_dir = {cache}

[basis]
path = {cache}/basis.npz
spinup_time = 0.5
snapshots = 20
spacing = 0.02
modes = 8

[filter]
kind = mfenkf
n_x = 4
n_u = 10
r = 5
alpha_u = 1.1
localization_radius = 3
"""


@pytest.fixture(scope="session")
def tiny_dir(tmp_path_factory):
    """Shared cache and config for a 7x15 FOM / 15x31 truth experiment."""
    base = tmp_path_factory.mktemp("tiny")
    cache = base / "cache"
    path = base / "tiny.ini"
    path.write_text(TINY_INI.format(out=base / "out", cache=cache))
    return base


@pytest.fixture(scope="session")
def tiny_cfg(tiny_dir):
    from mfenkf.config import load_config
    return load_config(str(tiny_dir / "tiny.ini"))


@pytest.fixture(scope="session")
def tiny_setup(tiny_cfg):
    from mfenkf import experiment
    return experiment.prepare(tiny_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * 0.1 * np.eye(n)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
