import subprocess
import sys

import pytest

from mfenkf.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, main


def test_run_writes_files(tiny_dir, tiny_setup, tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["run", "-c", str(tiny_dir / "tiny.ini"), "-o", str(out)])
    assert code == EXIT_OK
    assert (out / "summary.csv").exists() and (out / "run_1.csv").exists()
    assert "run 0 seed" in capsys.readouterr().out


def test_same_seed_same_bytes(tiny_dir, tiny_setup, tmp_path):
    for name in ("a", "b"):
        assert main(["run", "-c", str(tiny_dir / "tiny.ini"), "-o", str(tmp_path / name), "--seed", "3"]) == 0
    assert (tmp_path / "a" / "run_0.csv").read_bytes() == (tmp_path / "b" / "run_0.csv").read_bytes()


def test_build_basis_and_rank_hist(tiny_dir, tiny_setup, tmp_path, capsys):
    assert main(["build-basis", "-c", str(tiny_dir / "tiny.ini")]) == EXIT_OK
    assert "8 modes" in capsys.readouterr().out
    assert main(["rank-hist", "-c", str(tiny_dir / "tiny.ini"), "-o", str(tmp_path)]) == EXIT_OK
    assert "principal: KL to uniform" in capsys.readouterr().out


def test_sweep_subcommand(tiny_dir, tiny_setup, tmp_path):
    code = main(["sweep", "-c", str(tiny_dir / "tiny.ini"), "-o", str(tmp_path),
                 "--set", "sweep.kind=enkf", "--set", "experiment.runs=1"])
    assert code == EXIT_OK and (tmp_path / "sweep.csv").exists()


@pytest.mark.parametrize("extra", [["--set", "filter.kind=particle"], ["--set", "nonsense"],
                                   ["--set", "filter.n_x=1"]])
def test_config_errors_exit_2(tiny_dir, extra, capsys):
    assert main(["run", "-c", str(tiny_dir / "tiny.ini")] + extra) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path):
    assert main(["run", "-c", str(tmp_path / "missing.ini")]) == EXIT_CONFIG


def test_divergence_exit_3(tiny_dir, tiny_setup, tmp_path, capsys):
    # the signed-measure filter blows the model up on this tiny grid
    code = main(["run", "-c", str(tiny_dir / "tiny.ini"), "-o", str(tmp_path), "--set", "filter.kind=mlenkf"])
    assert code == EXIT_DIVERGED
    assert "numerical divergence" in capsys.readouterr().err


def test_console_entry_point(tiny_dir):
    proc = subprocess.run([sys.executable, "-m", "mfenkf.cli", "run", "-c", str(tiny_dir / "tiny.ini"),
                           "--set", "experiment.steps=bad"], capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
