import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radarfs.errors import ConfigError, InapplicableStrategy
from radarfs.flash_model import MIB, FlashTimingParams
from radarfs.harness import ModelRef, RunConfig, resolve_strategy, run_event_mode, run_simulation
from radarfs.harness.fastpath import FastPathUnsupported, run_fast_path
from radarfs.policy import init_mlp, save_model
from radarfs.strategies import strategy_grid
from radarfs.workload import Arrival, DataType, StreamSpec, WorkloadSpec

GRID = strategy_grid()


def one_stream(total, pkt=8192, rate=10**6, file_bytes=None, arrival=Arrival.PERIODIC):
    return StreamSpec(DataType.RADAR_ECHO, rate, pkt, total_bytes=total,
                      file_bytes=file_bytes or total, arrival=arrival)


def test_original_thousand_clusters_closed_form():
    wl = WorkloadSpec((one_stream(1000 * 8192),))
    r = run_simulation(RunConfig(wl, "original", charge_read_jumps=False))
    # per cluster: data jump is induced, FAT 2 jumps + 2 sectors, FDT 1 jump + 1 sector;
    # the 7 links that cross a FAT sector boundary rewrite two sectors per mirror
    mgmt = 1000 * (4 * 1_308_160 + 1536 * Fraction(25, 4)) + 7 * 1024 * Fraction(25, 4)
    assert Fraction(r.mu_exact) == mgmt / (1000 * 8192 * Fraction(25, 4))
    assert r.mu == pytest.approx(102.388375)
    assert r.engine == "fast"
    assert r.data_ns == 1000 * 51_200
    assert r.total_ns == r.data_ns + r.mgmt_ns


def test_report_fields_and_json(tmp_path):
    wl = WorkloadSpec((one_stream(64 * 8192),))
    r = run_simulation(RunConfig(wl, "fpfpa"))
    assert r.strategy.startswith("FPFPA:")
    assert r.throughput_mb_s == pytest.approx(160 / (1 + r.mu))
    assert r.bytes_offered == 64 * 8192 and r.files_written == 1
    p = tmp_path / "r.json"
    r.to_json(p)
    d = json.loads(p.read_text())
    assert d["mu_exact"] == r.mu_exact and "throughput_mb_s" in d


def test_static_setup_accounting():
    wl = WorkloadSpec((one_stream(64 * 8192),))
    s = run_simulation(RunConfig(wl, "fpfqa"))
    d = run_simulation(RunConfig(wl, "fpfqa", static_setup=False))
    assert s.setup_ns > 0 and d.setup_ns == 0
    assert d.mu > s.mu


def test_fast_and_event_agree_on_presets():
    wl = WorkloadSpec((one_stream(300 * 8192, pkt=4096, file_bytes=100 * 8192),))
    for p in ("original", "acpa", "fpfqa", "fpfpa"):
        cfg = RunConfig(wl, p)
        t, static = resolve_strategy(cfg)
        a = run_fast_path(cfg, t, static)
        b = run_event_mode(cfg, t, static)
        assert a.fingerprint() == b.fingerprint()
        assert (a.engine, b.engine) == ("fast", "event")


def test_fallback_note():
    wl = WorkloadSpec((one_stream(8 * 8192, pkt=1000),))
    r = run_simulation(RunConfig(wl, "fpfpa"))
    assert r.engine == "event"
    assert r.notes and r.notes[0].startswith("fast path not used")


def test_multi_stream_uses_event_engine():
    a = one_stream(40 * 8192)
    b = StreamSpec(DataType.PROC_RESULTS, 10**5, 4096, total_bytes=10 * 4096)
    r = run_simulation(RunConfig(WorkloadSpec((a, b)), "fpfpa"))
    assert r.engine == "event" and r.files_written == 2
    assert r.bytes_offered == 40 * 8192 + 10 * 4096


def test_random_runs_are_reproducible():
    s = [StreamSpec(DataType.GPS, 8192, 1024, total_bytes=200 * 1024, arrival=Arrival.RANDOM),
         StreamSpec(DataType.STATUS, 65536, 4096, total_bytes=100 * 4096, arrival=Arrival.RANDOM)]
    wl = WorkloadSpec(tuple(s), cache_bytes_per_stream=8192, seed=11)
    a = run_simulation(RunConfig(wl, "original"))
    b = run_simulation(RunConfig(wl, "original"))
    assert a.fingerprint() == b.fingerprint()
    c = run_simulation(RunConfig(wl, "original", seed=12))
    assert c.seed == 12


def test_bounded_cache_overflows_under_slow_strategy():
    # 64 kB packets at 160 MB/s cannot be absorbed when every cluster costs ~4 jumps
    s = StreamSpec(DataType.RADAR_ECHO, 160 * 10**6, 65536, total_bytes=200 * 65536)
    wl = WorkloadSpec((s,), cache_bytes_per_stream=4 * 65536)
    slow = run_simulation(RunConfig(wl, "original"))
    fast = run_simulation(RunConfig(wl, "fpfqa"))
    assert slow.overflow_events > 0
    assert slow.dropped_bytes == slow.overflow_events * 65536
    assert slow.bytes_offered == 200 * 65536
    assert fast.overflow_events < slow.overflow_events


def test_inapplicable_raises():
    r = StreamSpec(DataType.GPS, 8192, 1024, total_bytes=8192, arrival=Arrival.RANDOM)
    with pytest.raises(InapplicableStrategy):
        run_simulation(RunConfig(WorkloadSpec((r, r), seed=1), "fpfqa"))


def test_bad_strategy_and_empty_data():
    wl = WorkloadSpec((one_stream(8192),))
    with pytest.raises(ConfigError):
        run_simulation(RunConfig(wl, 42))
    with pytest.raises(ConfigError):
        run_simulation(RunConfig(wl, "model:/nonexistent.json"))
    tiny = WorkloadSpec((StreamSpec(DataType.GPS, 10, 1024, total_bytes=100),))
    with pytest.raises(ConfigError):
        run_simulation(RunConfig(tiny, "original"))


def test_model_strategy_is_runtime(tmp_path):
    p = tmp_path / "m.json"
    save_model(init_mlp(seed=0), p)
    wl = WorkloadSpec((one_stream(32 * 8192),))
    cfg = RunConfig(wl, ModelRef(str(p)))
    t, static = resolve_strategy(cfg)
    assert static is False
    assert str(ModelRef("x")) == "model:x"
    r = run_simulation(RunConfig(wl, f"model:{p}"))
    assert r.setup_ns == 0


small = st.builds(
    lambda C, P, F, extra: (C, 512 * P, 512 * F, extra),
    st.sampled_from([1, 4, 16]), st.integers(1, 40), st.integers(1, 300), st.integers(0, 600),
)


@settings(max_examples=40, deadline=None)
@given(small, st.sampled_from(GRID), st.booleans(), st.booleans(), st.sampled_from([1, 2, 16]))
def test_fast_path_bitwise_equivalence(sizes, t, charge, static, fl):
    C, P, F, extra = sizes
    timing = FlashTimingParams(sectors_per_cluster=C, volume_capacity=64 * MIB)
    total = P + 512 * extra
    wl = WorkloadSpec((StreamSpec(DataType.GPS, 10**6, P, total_bytes=total, file_bytes=F),))
    cfg = RunConfig(wl, t, timing=timing, charge_read_jumps=charge, static_setup=static,
                    freelist_sectors=fl, fdt_entries=4096)
    try:
        a = run_fast_path(cfg, t, static)
    except FastPathUnsupported:
        return
    b = run_event_mode(cfg, t, static)
    assert a.fingerprint() == b.fingerprint()
