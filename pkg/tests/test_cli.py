import csv
import shutil
import subprocess
import sys

import pytest

from tagreg import reference
from tagreg.cli import build_run_config, default_values, main, read_config_file
from tagreg.cli import ConfigError

SMALL = ["--problem", "repeated", "--k", "3", "--population", "20", "--generations", "5",
         "--set", "stop_on_solution=false"]


def run(tmp_path, *extra, campaign="c"):
    code = main(["run", *SMALL, "--out", str(tmp_path), "--campaign", campaign, *extra])
    assert code == 0
    return tmp_path / campaign


def test_run_writes_artifacts(tmp_path):
    d = run(tmp_path, "--seed", "3") / "3"
    assert {p.name for p in d.iterdir()} == {"report.csv", "solution.gp", "config.echo", "tags.csv"}
    rows = list(csv.DictReader(open(d / "report.csv")))
    assert len(rows) == 5 and rows[0]["generation"] == "0"


def test_run_is_byte_identical(tmp_path):
    a = run(tmp_path, "--seed", "4", campaign="a") / "4"
    b = run(tmp_path, "--seed", "4", "--workers", "2", campaign="b") / "4"
    for name in ("report.csv", "solution.gp", "tags.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_regulation_flag_is_echoed(tmp_path):
    d = run(tmp_path, "--seed", "1", "--regulation", "off") / "1"
    echo = read_config_file(d / "config.echo")
    assert echo["regulation_enabled"] == "false" and echo["seed"] == "1"
    # the echo is itself a valid config
    assert build_run_config(echo).regulation_enabled is False


def test_config_file_and_overrides(tmp_path):
    cfg_file = tmp_path / "x.cfg"
    cfg_file.write_text("# comment\nproblem = contextual\npopulation = 7\nrate_slip = 0.1\n")
    cfg = build_run_config({**read_config_file(cfg_file), "population": "9"})
    assert cfg.problem == "contextual" and cfg.population == 9 and cfg.rates.slip == 0.1
    assert build_run_config({"init_module_len": "2,4"}).limits.init_module_len == (2, 4)


@pytest.mark.parametrize("overrides, key", [
    ({"bogus": "1"}, "bogus"),
    ({"population": "many"}, "population"),
    ({"rate_slip": "2"}, "slip"),
    ({"regulation": "maybe"}, "regulation"),
])
def test_bad_config_names_the_key(overrides, key):
    with pytest.raises(ConfigError) as err:
        build_run_config(overrides)
    assert key in str(err.value)


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert main(["run", "--set", "wat=1"]) == 1
    assert "error:" in capsys.readouterr().err


def test_campaign_summary(tmp_path):
    code = main(["campaign", *SMALL, "--replicates", "4", "--base-seed", "10",
                 "--out", str(tmp_path), "--campaign", "rep"])
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "rep" / "summary.csv")))
    assert [r["seed"] for r in rows] == ["10", "11", "12", "13"]
    assert {r["condition"] for r in rows} == {"regulation_enabled"}
    assert all((tmp_path / "rep" / s / "report.csv").exists() for s in ("10", "13"))


def test_calculator_run_writes_cases(tmp_path):
    main(["run", "--problem", "calculator_prefix", "--population", "10", "--generations", "1",
          "--set", "train_per_op=2", "--set", "test_per_op=2", "--set", "sample_size=10",
          "--out", str(tmp_path)])
    d = tmp_path / "default" / "0"
    assert (d / "train_cases.csv").exists() and (d / "test_cases.csv").exists()
    assert "prefix" in (d / "train_cases.csv").read_text()


def analyze(tmp_path, what, name, problem, *extra):
    genome = str(reference.data_path(f"{name}.gp"))
    tags = str(reference.data_path(f"{name}_tags.csv"))
    return main(["analyze", what, genome, "--tags", tags, "--problem", problem,
                 "--out", str(tmp_path), *extra])


def test_analyze_subcommands(tmp_path, capsys):
    assert analyze(tmp_path, "knockout", "self_repression_k4", "repeated", "--k", "4") == 0
    assert "regulation_reliant" in (tmp_path / "knockout.csv").read_text()
    assert analyze(tmp_path, "network", "self_repression_k4", "repeated", "--k", "4") == 0
    assert "repress" in (tmp_path / "network.dot").read_text()
    assert analyze(tmp_path, "trace", "global_memory_k2", "repeated") == 0
    assert analyze(tmp_path, "profile", "global_memory_k2", "repeated") == 0
    assert (tmp_path / "profile.csv").exists() and (tmp_path / "trace.csv").exists()
    assert analyze(tmp_path, "generalize", "cryptic_changing", "changing",
                   "--samples", "500") == 0
    assert (tmp_path / "generalize.txt").read_text().startswith("false\n")
    assert analyze(tmp_path, "trace", "cryptic_changing", "changing",
                   "--permutation", "0,1,2") == 1
    # knockout strategies only make sense for solutions
    assert analyze(tmp_path, "knockout", "self_repression_k4", "repeated", "--k", "5") == 1


def test_validate(tmp_path, capsys):
    assert main(["validate", str(reference.data_path("walkthrough.gp"))]) == 0
    bad = tmp_path / "bad.gp"
    bad.write_text("Fn 0000:\n  Nop 0000 9 0 0\n")
    assert main(["validate", str(bad)]) == 1
    bad.write_text("Fn 0000:\n  Frobnicate 0000 0 0 0\n")
    assert main(["validate", str(bad)]) == 1
    assert "line 2" in capsys.readouterr().err


def test_dump_defaults(capsys):
    assert main(["dump-defaults"]) == 0
    text = capsys.readouterr().out
    assert set(read_config_file_text(text)) == set(default_values())
    assert main(["--dump-defaults"]) == 0
    assert capsys.readouterr().out == text


def read_config_file_text(text):
    return dict(line.split(" = ", 1) for line in text.splitlines() if line and not line.startswith("#"))


@pytest.mark.skipif(shutil.which("tagreg") is None, reason="console script not installed")
def test_console_script():
    out = subprocess.run(["tagreg", "dump-defaults"], capture_output=True, text=True)
    assert out.returncode == 0 and "population = 1000" in out.stdout
    mod = subprocess.run([sys.executable, "-m", "tagreg.cli", "dump-defaults"],
                         capture_output=True, text=True)
    assert mod.stdout == out.stdout
