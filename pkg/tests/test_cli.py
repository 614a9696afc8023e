import os
import subprocess
import sys

import pytest

from offdae.cli import main, parse_seeds, plot_csv
from offdae.errors import ConfigurationError

SMALL = {
    "fig3": ["--seeds", "20", "--samples", "1,10,100"],
    "fig4": ["--seeds", "20", "--samples", "1,10,100"],
    "counterexample": ["--mu-grid", "0.2,0.5", "--pi-grid", "0.5,1.0"],
    "verify": ["--instances", "3"],
    "train": ["--seeds", "2", "--method", "dae", "--method", "offpolicy-dae", "--total-steps", "2000"],
}


def _run(tmp_path, cmd, *extra):
    out = tmp_path / cmd
    return main([cmd, "--out", str(out), *SMALL[cmd], *extra]), out


def _csvs(path):
    return {p.name: p.read_bytes() for p in sorted(path.glob("*.csv"))}


@pytest.mark.parametrize("cmd", sorted(SMALL))
def test_rerun_is_bitwise_identical(tmp_path, cmd):
    code1, out1 = _run(tmp_path / "a", cmd)
    code2, out2 = _run(tmp_path / "b", cmd)
    assert code1 == code2 == 0
    first = _csvs(out1)
    assert first and first == _csvs(out2)


@pytest.mark.parametrize("cmd", ["fig3", "fig4", "train"])
def test_svg_regenerates_from_csv(tmp_path, cmd):
    _, out = _run(tmp_path, cmd)
    svgs = {p.name: p.read_bytes() for p in out.glob("*.svg")}
    assert svgs
    for p in out.glob("*.svg"):
        p.unlink()
    for csv in out.glob("*.csv"):
        if csv.name != "train_runs.csv":
            plot_csv(csv)
    assert {p.name: p.read_bytes() for p in out.glob("*.svg")} == svgs


def test_verify_fault_exit_code(tmp_path, capsys):
    code, _ = _run(tmp_path, "verify", "--inject-fault")
    assert code == 1
    assert "FAIL oracle_recovery" in capsys.readouterr().out


def test_verify_probe_skip(tmp_path, capsys):
    code, out = _run(tmp_path, "verify")
    assert code == 0
    assert "SKIP" in (out / "verify.csv").read_text()


def test_configuration_errors(tmp_path):
    assert main(["fig3", "--out", str(tmp_path), "--seeds", "x"]) == 2
    assert main(["fig3", "--out", str(tmp_path), "--samples", "0"]) == 2
    assert main(["counterexample", "--out", str(tmp_path), "--mu-grid", "1.0"]) == 2
    assert main(["train", "--out", str(tmp_path), "--n", "0", "--seeds", "1"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["train", "--method", "bogus"])
    assert exc.value.code == 2


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("methods = dae\nseeds = 0,1,2\ntotal_steps = 1000\ninitial_steps = 100\neval_interval = 500\n")
    out = tmp_path / "o"
    assert main(["train", "--config", str(cfg), "--seeds", "1", "--out", str(out)]) == 0
    rows = (out / "train.csv").read_text().splitlines()
    assert rows[0] == "method,step,mean_return,stderr,num_seeds"
    assert all(r.startswith("dae,") and r.endswith(",1") for r in rows[1:])
    cfg.write_text("bogus_key = 1\n")
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 2


def test_env_var_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("OFFDAE_OUT", str(tmp_path / "env"))
    assert main(["counterexample", "--mu-grid", "0.5", "--pi-grid", "0.5"]) == 0
    assert (tmp_path / "env" / "counterexample.csv").exists()


def test_parse_seeds():
    assert parse_seeds("3") == [0, 1, 2]
    assert parse_seeds("5:7") == [5, 6]
    assert parse_seeds("4,2") == [4, 2]
    with pytest.raises(ConfigurationError):
        parse_seeds("0")


def test_console_entry_point(tmp_path):
    env = dict(os.environ, OFFDAE_OUT=str(tmp_path))
    proc = subprocess.run([sys.executable, "-m", "offdae.cli", "--help"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    for flag in ("fig3", "fig4", "counterexample", "verify", "train"):
        assert flag in proc.stdout
