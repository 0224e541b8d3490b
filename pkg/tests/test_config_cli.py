import json
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from radarfs import cli
from radarfs.errors import ConfigError
from radarfs.flash_model import DEFAULT_TIMING, GIB
from radarfs.harness.calibrate import (
    calibrate,
    echo_workload,
    solve_capacity,
    solve_t_jump,
)
from radarfs.harness.config import (
    parse_bool,
    parse_config_text,
    parse_size,
    read_config,
    run_config_from,
    timing_from,
    timing_to,
    workload_from,
    workload_to,
)
from radarfs.policy import init_mlp, save_model
from radarfs.workload import Arrival, DataType

RUN_CFG = """\
# one radar echo stream
strategy = fpfpa
seed = 7
stream.0.type = radar_echo
stream.0.rate = 16MB
stream.0.packet = 64kB
stream.0.total = 4MiB   # small
"""


@pytest.mark.parametrize("text,value", [
    ("512", 512), ("64kB", 65536), ("64 KiB", 65536), ("16MB", 16 * 10**6),
    ("2GiB", 2 * GIB), ("1GB", 10**9), ("1.5kB", 1536), ("1/2MiB", 1 << 19),
])
def test_parse_size(text, value):
    assert parse_size(text) == value


@pytest.mark.parametrize("text", ["", "12 parsecs", "0.3B", "-1"])
def test_parse_size_errors(text):
    with pytest.raises(ConfigError):
        parse_size(text)


def test_parse_bool():
    assert parse_bool("Yes") and not parse_bool("off")
    with pytest.raises(ConfigError):
        parse_bool("maybe")


def test_config_text_errors():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("a = 1\nnonsense\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("a = 1\na = 2\n")
    with pytest.raises(ConfigError):
        read_config("/does/not/exist.cfg")


def test_run_config():
    cfg = run_config_from(parse_config_text(RUN_CFG))
    assert cfg.strategy == "fpfpa" and cfg.seed == 7
    (s,) = cfg.workload.streams
    assert (s.data_type, s.rate, s.packet_bytes, s.total_bytes) == (
        DataType.RADAR_ECHO, 16 * 10**6, 65536, 4 << 20)
    assert cfg.static_setup is None and cfg.fast_path


def test_workload_round_trip():
    d = parse_config_text(RUN_CFG + "stream.1.type = GPS\nstream.1.rate = 8kB\n"
                          "stream.1.packet = 1kB\nstream.1.duration = 3/2\n"
                          "stream.1.arrival = random\ncache_bytes_per_stream = 1MiB\n")
    wl = workload_from(d)
    assert wl.streams[1].arrival is Arrival.RANDOM
    assert wl.streams[1].duration_s == Fraction(3, 2)
    assert workload_from(workload_to(wl), seed=7) == wl


def test_workload_errors():
    with pytest.raises(ConfigError):
        workload_from({})
    with pytest.raises(ConfigError):
        workload_from({"stream.0.rate": "1MB"})
    with pytest.raises(ConfigError):
        workload_from({"stream.0.rate": "1MB", "stream.0.packet": "1kB",
                       "stream.0.total": "1MB", "stream.0.type": "laser"})


def test_timing_round_trip():
    t = DEFAULT_TIMING.replace(t_jump=2_000_000, volume_capacity=GIB)
    assert timing_from(timing_to(t)) == t
    assert timing_from({}) is DEFAULT_TIMING


@given(st.integers(1, 10**12))
def test_size_integers_round_trip(n):
    assert parse_size(str(n)) == n


# --- calibration


def test_solve_t_jump():
    assert solve_t_jump(Fraction(1022, 10)) == 1_308_160
    with pytest.raises(ConfigError):
        solve_t_jump(0)


def test_calibrate_anchors():
    res = calibrate()
    assert res.timing.t_jump == 1_308_160
    assert res.mu_original == pytest.approx(102.2)
    assert res.mu_acpa == pytest.approx(0.32, abs=0.005)
    assert res.timing.volume_capacity < DEFAULT_TIMING.volume_capacity
    assert res.warnings == []


def test_calibrate_limits():
    with pytest.raises(ConfigError):
        calibrate(mu_original=2, mu_acpa=None)  # jump of 8 sector writes
    with pytest.warns(UserWarning):
        res = calibrate(mu_original=1000, mu_acpa=None)
    assert res.warnings and res.mu_acpa is None


def test_acpa_target_infeasible():
    small = echo_workload(nbytes=64 << 20)
    with pytest.raises(ConfigError):
        solve_capacity(DEFAULT_TIMING, Fraction(1, 10**6), small)


# --- command line


def run_cli(*args):
    return cli.main([str(a) for a in args])


def test_cli_simulate(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(RUN_CFG)
    out = tmp_path / "r.json"
    assert run_cli("simulate", "--config", cfg, "--out", out) == 0
    d = json.loads(out.read_text())
    assert d["strategy"].startswith("FPFPA") and d["seed"] == 7
    assert "mu=" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run_cli("simulate", "--config", tmp_path / "missing.cfg") == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text(RUN_CFG.replace("fpfpa", "warp9"))
    assert run_cli("simulate", "--config", bad) == 2
    mixed = tmp_path / "mixed.cfg"
    mixed.write_text(
        "strategy = fpfqa\nseed = 1\n"
        "stream.0.rate = 1MB\nstream.0.packet = 4kB\nstream.0.total = 1MB\nstream.0.arrival = random\n"
        "stream.1.rate = 1MB\nstream.1.packet = 4kB\nstream.1.total = 1MB\nstream.1.arrival = random\n"
    )
    assert run_cli("simulate", "--config", mixed) == 3


def test_cli_consistency_exit(tmp_path, monkeypatch):
    import radarfs.filesystem as fs

    monkeypatch.chdir(tmp_path)
    monkeypatch.setattr(fs, "verify_consistency", lambda vol: ["forced failure"])
    cfg = tmp_path / "run.cfg"
    cfg.write_text(RUN_CFG + "fast_path = false\n")
    assert run_cli("simulate", "--config", cfg) == 4
    dump = json.loads((tmp_path / "consistency_dump.json").read_text())
    assert "fat_runs" in dump


def test_cli_calibrate(tmp_path):
    out = tmp_path / "timing.cfg"
    assert run_cli("calibrate", "--mu-original", "102.2", "--mu-acpa", "none", "--out", out) == 0
    assert timing_from(read_config(out)).t_jump == 1_308_160
    assert out.read_text().startswith("# calibrated")


def test_cli_predict(tmp_path, capsys):
    m = tmp_path / "m.json"
    save_model(init_mlp(seed=2), m)
    w = tmp_path / "w.cfg"
    w.write_text(RUN_CFG)
    assert run_cli("predict", "--model", m, "--workload", w) == 0
    assert capsys.readouterr().out.startswith("fatq=")


@pytest.mark.filterwarnings("ignore:every head sees")
def test_cli_label_and_train(tmp_path, monkeypatch):
    import radarfs.workload as wl_mod

    full = wl_mod.generate_training_grid
    monkeypatch.setattr(wl_mod, "generate_training_grid", lambda: full()[::400])
    grid, lab, model = tmp_path / "g.csv", tmp_path / "l.csv", tmp_path / "m.json"
    assert run_cli("gen-trainset", "--out", grid) == 0
    assert run_cli("label", "--grid", grid, "--strategies", "presets", "--budget", "2MB",
                   "--out", lab) == 0
    rows = lab.read_text().splitlines()
    assert rows[0].startswith("# schema-version") and len(rows) == 2 + 11
    tcfg = tmp_path / "t.cfg"
    tcfg.write_text("hidden = 8\npretrain_epochs = 2\nfinetune_epochs = 2\n")
    assert run_cli("--seed", "3", "train", "--data", lab, "--config", tcfg, "--out", model,
                   "--report", tmp_path / "rep.csv") == 0
    assert json.loads(model.read_text())["layer_dims"] == [20, 8]
    assert run_cli("train", "--data", grid, "--out", model) == 2  # unlabelled
    assert run_cli("label", "--grid", grid, "--strategies", "bogus", "--out", lab) == 2
