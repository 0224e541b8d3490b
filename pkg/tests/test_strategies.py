import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radarfs import filesystem as fs
from radarfs.errors import ConfigError, InapplicableStrategy
from radarfs.filesystem import FatQueryMethod, FdtQueryMethod
from radarfs.flash_model import DEFAULT_TIMING
from radarfs.strategies import (
    HEAD_SIZES,
    DataWrite,
    FatUpdate,
    FdtUpdate,
    Preset,
    Session,
    StrategyTuple,
    applicable,
    check_applicable,
    format_strategy,
    parse_strategy,
    preset,
    preset_name,
    strategy_grid,
)
from radarfs.workload import Arrival, DataType, StreamSpec, WorkloadSpec

T = DEFAULT_TIMING.replace(volume_capacity=8192 * 4096)  # 32 FAT sectors
GRID = strategy_grid()


def run(t, packets, pkt, file_bytes, static=True, charge=False):
    vol = fs.format_volume(T, charge_read_jumps=charge)
    s = Session(t, vol, static_setup=static)
    for _ in range(packets):
        s.deliver(0, pkt, file_bytes)
    s.finish()
    assert fs.verify_consistency(vol) == []
    return vol


def test_grid_size_and_uniqueness():
    assert len(GRID) == 960
    assert len(set(GRID)) == 960
    assert GRID == sorted(GRID)
    for p in Preset:
        assert preset(p) in GRID


def test_head_sizes():
    assert HEAD_SIZES == (3, 4, 2, 4, 3)


@pytest.mark.parametrize("text", [
    "fatq=scan,fatu=per_cluster,fdtq=scan,fdtu=per_cluster,data=cluster",
    "fatq=prescan,fatu=full_prealloc,fdtq=cached,fdtu=close,data=burst8",
    "fatq=freelist,fatu=batch16,fdtq=cached,fdtu=batch64,data=sector",
])
def test_text_round_trip(text):
    assert format_strategy(parse_strategy(text)) == text


def test_preset_names():
    assert parse_strategy("FPFQA") == preset("fpfqa") == preset(Preset.FPFQA)
    assert preset_name(preset("acpa")) == "ACPA"
    assert preset_name(GRID[0]) is None
    assert str(preset("fpfpa")) == "fatq=freelist,fatu=batch16,fdtq=cached,fdtu=batch16,data=cluster"


@pytest.mark.parametrize("text", [
    "nonsense",
    "fatq=scan,fatu=per_cluster,fdtq=scan,fdtu=per_cluster",
    "fatq=scan,fatu=full_prealloc,fdtq=scan,fdtu=close,data=cluster",
    "fatq=scan,fatu=batch65,fdtq=scan,fdtu=close,data=cluster",
    "fatq=scan,fatu=per_cluster,fdtq=scan,fdtu=close,data=burst0",
    "fatq=disk,fatu=per_cluster,fdtq=scan,fdtu=close,data=cluster",
])
def test_bad_strategies(text):
    with pytest.raises(ConfigError):
        parse_strategy(text)


def test_params_only_with_matching_mode():
    with pytest.raises(ConfigError):
        StrategyTuple(FatQueryMethod.SCAN_ON_DEMAND, FatUpdate.PER_CLUSTER,
                      FdtQueryMethod.SCAN_ON_DEMAND, FdtUpdate.PER_CLUSTER,
                      DataWrite.PER_CLUSTER, fat_batch=4)


def test_applicability():
    r = StreamSpec(DataType.GPS, 8192, 1024, total_bytes=8192, arrival=Arrival.RANDOM)
    p = StreamSpec(DataType.RADAR_ECHO, 10**6, 65536, total_bytes=65536)
    fp = preset("fpfqa")
    assert applicable(fp, WorkloadSpec((p,)))
    assert applicable(fp, WorkloadSpec((r,), seed=1))
    assert applicable(fp, WorkloadSpec((p, p)))
    assert not applicable(fp, WorkloadSpec((p, r), seed=1))
    assert applicable(preset("fpfpa"), WorkloadSpec((p, r), seed=1))
    with pytest.raises(InapplicableStrategy):
        check_applicable(fp, WorkloadSpec((r, r), seed=1))


# 6 packets of 4 KiB into 16 KiB files: 3 clusters over 2 files
def test_original_counters():
    c = run(preset("original"), 6, 4096, 16384).counters
    assert (c.data_bytes, c.data_jumps, c.induced_jumps) == (24576, 3, 3)
    assert (c.fat_sector_writes, c.fat_jumps) == (6, 6)
    assert (c.fdt_sector_writes, c.fdt_jumps) == (3, 3)


def test_acpa_counters():
    c = run(preset("acpa"), 6, 4096, 16384).counters
    # each file claims and releases the whole free tail: 2 x (32 + 32) sectors
    assert (c.fat_sector_writes, c.fat_jumps) == (256, 8)
    assert (c.data_jumps, c.fdt_sector_writes) == (2, 2)
    assert c.prealloc_release_bytes == 256 * 512


def test_fpfqa_static_setup_moves_claim():
    v = run(preset("fpfqa"), 6, 4096, 16384, static=True)
    assert v.counters.fat_sector_writes == 0
    assert v.setup_counters.fat_sector_writes == 128
    v = run(preset("fpfqa"), 6, 4096, 16384, static=False)
    assert v.counters.fat_sector_writes == 128
    assert v.setup_counters.fat_sector_writes == 0


def test_fpfpa_batches_metadata():
    c = run(preset("fpfpa"), 6, 4096, 16384).counters
    assert (c.data_jumps, c.fat_jumps, c.fdt_jumps) == (1, 2, 1)


def test_per_packet_fdt_and_sector_writes():
    t = parse_strategy("fatq=scan,fatu=per_cluster,fdtq=scan,fdtu=per_packet,data=sector")
    c = run(t, 6, 4096, 16384).counters
    assert (c.data_jumps, c.fdt_sector_writes) == (6, 6)


def test_burst_holds_data_until_full():
    t = parse_strategy("fatq=prescan,fatu=full_prealloc,fdtq=cached,fdtu=close,data=burst2")
    vol = fs.format_volume(T)
    s = Session(t, vol)
    s.deliver(0, 8192, 10**6)
    assert vol.counters.data_bytes == 0
    s.deliver(0, 8192, 10**6)
    assert vol.counters.data_bytes == 16384
    s.deliver(0, 512, 10**6)
    s.finish()
    assert vol.counters.data_bytes == 16384 + 512


def test_rotation_splits_packets():
    vol = fs.format_volume(T)
    s = Session(preset("fpfpa"), vol)
    s.deliver(0, 3000, 2048)  # spans two files
    s.finish()
    assert s.files_written == 2
    assert [e.size for e in vol.fdt] == [2048, 952]
    assert fs.verify_consistency(vol) == []


def test_double_open_rejected():
    s = Session(preset("original"), fs.format_volume(T))
    s.on_file_open(0, 4096)
    with pytest.raises(ConfigError):
        s.on_file_open(0, 4096)


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(GRID),
    st.lists(st.tuples(st.integers(0, 2), st.integers(1, 20000)), min_size=1, max_size=30),
    st.integers(512, 40000),
    st.booleans(),
)
def test_any_tuple_keeps_volume_consistent(t, packets, file_bytes, charge):
    vol = fs.format_volume(T, charge_read_jumps=charge)
    s = Session(t, vol)
    total = 0
    for stream, n in packets:
        s.deliver(stream, n, file_bytes)
        total += n
    s.finish()
    assert fs.verify_consistency(vol) == []
    assert sum(e.size for e in vol.fdt) == total
    assert not vol.fat.dirty and not vol.fdt_dirty
    assert all(not e.is_open for e in vol.fdt)
