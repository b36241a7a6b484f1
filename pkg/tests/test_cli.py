import re

import pytest

from driftbench import ascoot, cli

SMALL_RUN = """\
stream.preset = short
stream.dim = 6
stream.steps_per_domain = 5
model.source_samples = 300
model.source_epochs = 30
optim.lr = 0.01
run.modes = ctta_t, no_adapt
run.seeds = 0, 1
"""


@pytest.fixture
def small_conf(tmp_path):
    path = tmp_path / "small.conf"
    path.write_text(SMALL_RUN)
    return path


def objectives(text):
    return [float(v) for v in re.findall(r"^J_\d+ = (\S+)$", text, flags=re.M)]


def test_run_twice_gives_identical_csv(tmp_path, small_conf, capsys):
    assert cli.main(["run", "--config", str(small_conf), "--out", str(tmp_path / "a")]) == cli.EXIT_OK
    assert cli.main(["run", "--config", str(small_conf), "--out", str(tmp_path / "b")]) == cli.EXIT_OK
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    out = capsys.readouterr().out
    assert "ctta_t" in out and "no_adapt" in out


def test_run_flags_override_config(tmp_path, small_conf):
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(small_conf), "--out", str(out), "--seeds", "3", "--modes", "no_adapt"]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()[1:]
    assert {line.split(",")[0] for line in lines} == {"no_adapt/seed3"}


def test_config_error_names_key_and_line(tmp_path, capsys):
    bad = tmp_path / "bad.conf"
    bad.write_text("stream.dim = 6\nrfp.gamma = -2\n")
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "rfp.gamma" in err and "line 2" in err
    assert not (tmp_path / "o").exists()


def test_missing_config_file_is_a_config_error(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "absent.conf")]) == cli.EXIT_CONFIG


def test_bad_mode_flag(tmp_path, small_conf):
    assert cli.main(["run", "--config", str(small_conf), "--modes", "ctta_t,bogus"]) == cli.EXIT_CONFIG


def test_unwritable_output_is_an_io_error(tmp_path, small_conf):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["run", "--config", str(small_conf), "--out", str(blocker / "sub")]) == cli.EXIT_IO


def test_ascoot_demo_decreases_and_writes_plans(tmp_path, capsys):
    assert cli.main(["ascoot", "--out", str(tmp_path)]) == cli.EXIT_OK
    j = objectives(capsys.readouterr().out)
    assert len(j) >= 3
    assert all(b < a for a, b in zip(j, j[1:-1]))
    blocks = ascoot.read_matrices(tmp_path / "plans.txt")
    assert blocks["pi_s"].shape == (5, 4) and blocks["pi_f"].shape == (3, 2)


def test_ascoot_zero_cost_file(tmp_path, capsys):
    problem = tmp_path / "flat.txt"
    problem.write_text("x 3 2\n1 1\n1 1\n1 1\ne 4 2\n" + "1 1\n" * 4)
    assert cli.main(["ascoot", str(problem), "--out", str(tmp_path)]) == cli.EXIT_OK
    j = objectives(capsys.readouterr().out)
    assert len(j) == 2 and j[-1] == pytest.approx(0.0, abs=1e-12)


def test_ascoot_malformed_file(tmp_path, capsys):
    problem = tmp_path / "broken.txt"
    problem.write_text("x 2 2\n1 2\n3 oops\n")
    assert cli.main(["ascoot", str(problem), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "byte offset" in capsys.readouterr().err


def test_ascoot_missing_file_is_an_io_error(tmp_path):
    assert cli.main(["ascoot", str(tmp_path / "absent.txt"), "--out", str(tmp_path)]) == cli.EXIT_IO


def test_ascoot_outer_cap_reports_non_convergence(tmp_path):
    assert cli.main(["ascoot", "--max-outer", "1", "--out", str(tmp_path)]) == cli.EXIT_NONCONVERGED
    assert (tmp_path / "plans.txt").exists()


def test_selftest_passes(capsys):
    assert cli.main(["selftest"]) == cli.EXIT_OK
    assert "FAIL" not in capsys.readouterr().out
