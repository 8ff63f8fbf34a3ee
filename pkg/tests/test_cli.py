import json

import numpy as np
import pytest

from spheredam.cli import main
from spheredam.config import (
    ConfigError,
    parse_config,
    parse_memory_budget,
    serialize_config,
)

SCAN_CFG = """\
[kernel]
kind = lse
beta_net = 1.0

[schedule]
alpha_values = 0.3 0.5
temp_values = 0.2 0.6
m_min = 300
m_max = 300
ntr_max = 3
ntr_min = 3

[trial]
n_eq = 150
n_samp = 80

[run]
seed = 11
workers = 1
"""


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_config_roundtrip_is_idempotent():
    cfg = parse_config(SCAN_CFG)
    text1 = serialize_config(cfg)
    cfg2 = parse_config(text1)
    assert cfg2 == cfg
    assert serialize_config(cfg2) == text1


def test_config_errors_name_the_key():
    with pytest.raises(ConfigError, match=r"\[kernel\] kind"):
        parse_config("[kernel]\nkind = quadratic\n")
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("[schedule]\nwidth = 3\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[extras]\nx = 1\n")
    with pytest.raises(ConfigError, match=r"\[trial\] n_eq"):
        parse_config("[trial]\nn_eq = soon\n")
    with pytest.raises(ConfigError, match="not both"):
        parse_config("[schedule]\nalpha_values = 0.1\nalpha_min = 0.1\n"
                     "alpha_max = 0.2\nalpha_step = 0.1\n")


def test_memory_budget_parsing():
    assert parse_memory_budget("1024") == 1024
    assert parse_memory_budget("2K") == 2048
    assert parse_memory_budget("1G") == 2**30
    with pytest.raises(ConfigError):
        parse_memory_budget("huge")
    with pytest.raises(ConfigError):
        parse_memory_budget("-3")


def test_grid_triple_config():
    cfg = parse_config("[schedule]\nalpha_min = 0.1\nalpha_max = 0.3\n"
                       "alpha_step = 0.1\n")
    assert cfg.schedule.alpha_grid == pytest.approx((0.1, 0.2, 0.3))


def test_scan_writes_outputs_and_manifest(tmp_path):
    cfg_path = write(tmp_path / "scan.cfg", SCAN_CFG)
    out = tmp_path / "out"
    assert main(["scan", "--config", cfg_path, "--out", str(out)]) == 0

    map_text = (out / "map.csv").read_text()
    lines = map_text.splitlines()
    assert lines[0] == "alpha,T,N,M,n_trials,mean_alignment,stderr,acceptance,phase"
    assert len(lines) == 5  # 2x2 grid
    assert (out / "phase.csv").exists()
    assert (out / "plot.gp").exists()

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "scan"
    assert manifest["master_seed"] == 11
    assert manifest["config_text"] == SCAN_CFG
    assert set(manifest["outputs"]) == {"map.csv", "phase.csv"}
    assert len(manifest["cell_timings"]) == 4


def test_scan_reproducible_from_manifest(tmp_path):
    cfg_path = write(tmp_path / "scan.cfg", SCAN_CFG)
    out1 = tmp_path / "first"
    assert main(["scan", "--config", cfg_path, "--out", str(out1)]) == 0
    manifest = json.loads((out1 / "manifest.json").read_text())

    replay_cfg = write(tmp_path / "replay.cfg", manifest["config_text"])
    out2 = tmp_path / "second"
    assert main(["scan", "--config", replay_cfg, "--out", str(out2),
                 "--seed", str(manifest["master_seed"])]) == 0
    assert (out1 / "map.csv").read_bytes() == (out2 / "map.csv").read_bytes()
    assert (out1 / "phase.csv").read_bytes() == (out2 / "phase.csv").read_bytes()


def test_scan_seed_flag_changes_map(tmp_path):
    cfg_path = write(tmp_path / "scan.cfg", SCAN_CFG)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["scan", "--config", cfg_path, "--out", str(out1)]) == 0
    assert main(["scan", "--config", cfg_path, "--out", str(out2),
                 "--seed", "99"]) == 0
    assert (out1 / "map.csv").read_text() != (out2 / "map.csv").read_text()


def test_scan_rejects_bad_config(tmp_path, capsys):
    cfg_path = write(tmp_path / "bad.cfg", "[kernel]\nkind = nope\n")
    assert main(["scan", "--config", cfg_path, "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "kind" in err


def test_scan_warns_when_lsr_has_no_basin(tmp_path, capsys):
    cfg = """\
[kernel]
kind = lsr
b = 0.8

[schedule]
alpha_values = 0.3
temp_values = 0.5
m_min = 200
m_max = 200
ntr_max = 2
ntr_min = 2

[trial]
n_eq = 50
n_samp = 50
phi_init_low = 0.99
phi_init_high = 1.0

[run]
seed = 4
workers = 1
"""
    cfg_path = write(tmp_path / "lsr.cfg", cfg)
    code = main(["scan", "--config", cfg_path, "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert "no nontrivial retrieval basin" in err
    assert code in (0, 3)  # proceeds; cells may fail but the run completes


def test_scan_partial_failure_exit_code(tmp_path):
    cfg = """\
[kernel]
kind = lsr
b = 50.0

[schedule]
alpha_values = 0.4
temp_values = 0.5
m_min = 200
m_max = 200
ntr_max = 2
ntr_min = 2

[trial]
n_eq = 20
n_samp = 20
phi_init_low = 0.75
phi_init_high = 0.76

[run]
seed = 4
workers = 1
"""
    cfg_path = write(tmp_path / "fail.cfg", cfg)
    assert main(["scan", "--config", cfg_path, "--out", str(tmp_path / "o")]) == 3


def test_trial_trace_and_zero_temperature(tmp_path):
    cfg = """\
[kernel]
kind = lse
beta_net = 1.0

[trial]
n = 40
m = 1
temperature = 1e-6
n_eq = 300
n_samp = 200
phi_init_low = 0.999
phi_init_high = 0.9995

[run]
seed = 8
"""
    cfg_path = write(tmp_path / "trial.cfg", cfg)
    out = tmp_path / "out"
    assert main(["trial", "--config", cfg_path, "--out", str(out)]) == 0
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0] == "step,phi1,energy,accepted"
    assert len(lines) == 1 + 300 + 200
    last_phi = float(lines[-1].split(",")[1])
    assert last_phi > 0.999
    manifest = json.loads((out / "manifest.json").read_text())
    assert "trace.csv" in manifest["outputs"]


def test_trial_requires_dimensions(tmp_path, capsys):
    cfg_path = write(tmp_path / "t.cfg", "[trial]\ntemperature = 0.5\n")
    assert main(["trial", "--config", cfg_path, "--out", str(tmp_path / "o")]) == 1
    assert "[trial] n" in capsys.readouterr().err


def test_trial_out_of_support_exit_and_message(tmp_path, capsys):
    cfg = """\
[kernel]
kind = lsr
b = 50.0

[trial]
n = 60
m = 5
temperature = 0.5
n_eq = 10
n_samp = 10
phi_init_low = 0.75
phi_init_high = 0.76

[run]
seed = 3
"""
    cfg_path = write(tmp_path / "t.cfg", cfg)
    assert main(["trial", "--config", cfg_path, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "b = 50" in err and "phi_c" in err


def test_oracle_command(tmp_path):
    cfg = """\
[kernel]
kind = lse
beta_net = 1.0

[oracle]
n = 100
temp_values = 0.1 0.5 1.0
points = 20000
"""
    cfg_path = write(tmp_path / "o.cfg", cfg)
    out = tmp_path / "out"
    assert main(["oracle", "--config", cfg_path, "--out", str(out)]) == 0
    lines = (out / "oracle.csv").read_text().splitlines()
    assert lines[0] == "T,phi_eq"
    assert len(lines) == 4
    values = [float(l.split(",")[1]) for l in lines[1:]]
    assert values == sorted(values, reverse=True)  # monotone decreasing for lse


def test_oracle_command_single_row(tmp_path):
    cfg = "[kernel]\nkind = lse\nbeta_net = 1.0\n\n[oracle]\nn = 100\ntemp_values = 0.1\npoints = 20000\n"
    cfg_path = write(tmp_path / "o.cfg", cfg)
    out = tmp_path / "out"
    assert main(["oracle", "--config", cfg_path, "--out", str(out)]) == 0
    assert len((out / "oracle.csv").read_text().splitlines()) == 2


def test_oracle_lsr_rows_exceed_wall(tmp_path):
    cfg = """\
[kernel]
kind = lsr
b = 3.41

[oracle]
n = 99
temp_values = 0.25 1.0 2.0
points = 20000
"""
    cfg_path = write(tmp_path / "o.cfg", cfg)
    out = tmp_path / "out"
    assert main(["oracle", "--config", cfg_path, "--out", str(out)]) == 0
    phi_c = 1.0 - 1.0 / 3.41
    values = [float(l.split(",")[1])
              for l in (out / "oracle.csv").read_text().splitlines()[1:]]
    assert all(v > phi_c for v in values)


def test_compare_identical_columns_and_missing_alpha(tmp_path, capsys):
    map_csv = tmp_path / "map.csv"
    map_csv.write_text(
        "alpha,T,N,M,n_trials,mean_alignment,stderr,acceptance,phase\n"
        "0.1,0.5,50,100,4,0.8,0.01,0.5,retrieval\n"
        "0.1,1.5,50,100,4,0.1,0.01,0.5,non-retrieval\n"
    )
    oracle_csv = tmp_path / "oracle.csv"
    oracle_csv.write_text("T,phi_eq\n0.5,0.8\n1.5,0.75\n")

    out_csv = tmp_path / "cmp.csv"
    code = main(["compare", "--map", str(map_csv), "--alpha", "0.1",
                 "--oracle", str(oracle_csv), "--out-csv", str(out_csv)])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "max |delta| = 0.000000" in stdout
    assert "post-transition (excluded)" in stdout
    rows = out_csv.read_text().splitlines()
    assert rows[0] == "alpha,T,mean_alignment,phi_eq,abs_delta,in_verdict"
    assert rows[1].endswith(",1")   # retrieval row in the verdict
    assert rows[2].endswith(",0")   # post-transition row excluded

    code = main(["compare", "--map", str(map_csv), "--alpha", "0.3",
                 "--oracle", str(oracle_csv)])
    assert code == 1
    assert "available: 0.1" in capsys.readouterr().err


def test_workers_env_override(tmp_path, monkeypatch):
    cfg_path = write(tmp_path / "scan.cfg", SCAN_CFG)
    out1, out2 = tmp_path / "w1", tmp_path / "w2"
    assert main(["scan", "--config", cfg_path, "--out", str(out1)]) == 0
    monkeypatch.setenv("SPHEREDAM_WORKERS", "2")
    assert main(["scan", "--config", cfg_path, "--out", str(out2)]) == 0
    assert (out1 / "map.csv").read_bytes() == (out2 / "map.csv").read_bytes()
