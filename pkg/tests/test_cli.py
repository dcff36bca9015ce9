import csv
import io
import math
from pathlib import Path

import pytest

from gmmnoma import theory
from gmmnoma.cli import cli_main

CONFIGS = sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.toml"))


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.name)
def test_validate_shipped_configs(path, capsys):
    assert cli_main(["validate-config", str(path)]) == 0
    assert capsys.readouterr().out.strip().endswith(": ok")


def test_usage_errors(capsys):
    assert cli_main(["run"]) == 1
    assert "usage" in capsys.readouterr().err
    assert cli_main([]) == 1
    assert cli_main(["run", "x.toml", "--bogus"]) == 1
    assert cli_main(["theory", "--gamma-db", "0:-1:5"]) == 1
    assert cli_main(["--help"]) == 0


def test_config_errors(tmp_path):
    assert cli_main(["validate-config", str(tmp_path / "missing.toml")]) == 1
    p = tmp_path / "bad.toml"
    p.write_text('scenario = "Noma2"\ntrials = 0\n')
    assert cli_main(["run", str(p)]) == 1
    p.write_text('scenario = "Noma2"\ntrials = 2\n')
    assert cli_main(["run", str(p), "--trials", "0"]) == 1


def test_runtime_error_exit_code(tmp_path):
    p = tmp_path / "ok.toml"
    p.write_text('scenario = "SingleUser"\nsnr_db = 6\ntrials = 1\nblocklength = 50\n')
    assert cli_main(["run", str(p), "--out", str(tmp_path / "no" / "dir.csv")]) == 2


def test_run_overrides_and_outputs(tmp_path, capsys):
    p = tmp_path / "ok.toml"
    p.write_text('scenario = "SingleUser"\nsnr_db = 6\ntrials = 5\nblocklength = 50\n')
    out = tmp_path / "a.csv"
    assert cli_main(["run", str(p), "--out", str(out), "--seed", "9", "--trials", "2"]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert {r["seed"] for r in rows} == {"9"} and {r["trials"] for r in rows} == {"2"}
    assert cli_main(["run", str(p), "--seed", "9", "--trials", "2"]) == 0
    assert capsys.readouterr().out == out.read_text()
    assert cli_main(["run", str(p), "--out", str(tmp_path / "a.json")]) == 0
    assert (tmp_path / "a.json").read_text().startswith("[")


def test_theory_grid_matches_direct_calls(capsys):
    assert cli_main(["theory", "--gamma-db", "0:2:20", "--n", "500"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 12
    rows = list(csv.DictReader(lines))
    for i, r in enumerate(rows):
        g = 10 ** (2 * i / 10)
        ref = theory.ser_single_user(g, 500, c3=theory.DEFAULT_C3)
        assert float(r["snr_db_user1"]) == 2 * i
        assert math.isclose(float(r["ser_theory"]), ref, rel_tol=1e-9)


def test_theory_two_user(capsys):
    assert cli_main(["theory", "--gamma-db", "4", "--gap-db", "9", "--c3", "1e-4"]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    p1, p2 = theory.ser_noma_two_user(10 ** 1.3, 10 ** 0.4, 500, c3=1e-4)
    assert math.isclose(float(rows[0]["ser_theory"]), p1, rel_tol=1e-9)
    assert math.isclose(float(rows[1]["ser_theory"]), p2, rel_tol=1e-9)
