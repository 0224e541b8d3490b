"""Stream definitions, packet-arrival synthesis, the training grid and the
feature encoding fed to the strategy selector.

Rates in MB/s are decimal (10**6 B/s).  Sizes, and rates quoted in kB/s,
are binary (1 kB = 1024 B); the grids that step in kB/s therefore top out
at 1024 kB/s and 16384 kB/s.
"""

from __future__ import annotations

import csv
import enum
import heapq
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError, EncodingError
from .flash_model import GIB, KB, MB, MIB, FlashTimingParams, SECTOR_BYTES

SCHEMA_VERSION = 1
NS_PER_S = 10**9

DEFAULT_FILE_FLOOR = 64 * MIB
DEFAULT_FILE_CAP = 2 * GIB
DEFAULT_FILE_SECONDS = 4
JITTER_LOW, JITTER_HIGH = 0.5, 1.5


class DataType(enum.Enum):
    RADAR_ECHO = 0
    PROC_RESULTS = 1
    STATUS = 2
    GPS = 3
    SENSOR = 4
    PARAMS = 5
    USB = 6


class Interface(enum.Enum):
    ADC = 0
    FPGA_INTERNAL = 1
    UART = 2  # GPS and sensor links share one class
    USB = 3


INTERFACE_OF = {
    DataType.RADAR_ECHO: Interface.ADC,
    DataType.PROC_RESULTS: Interface.FPGA_INTERNAL,
    DataType.STATUS: Interface.FPGA_INTERNAL,
    DataType.PARAMS: Interface.FPGA_INTERNAL,
    DataType.GPS: Interface.UART,
    DataType.SENSOR: Interface.UART,
    DataType.USB: Interface.USB,
}


class Arrival(enum.Enum):
    PERIODIC = "periodic"
    RANDOM = "random"


def default_file_bytes(rate) -> int:
    """max(64 MiB, 4 s of the stream) capped at 2 GiB, sector-aligned."""
    n = max(DEFAULT_FILE_FLOOR, int(DEFAULT_FILE_SECONDS * Fraction(rate)))
    n = min(n, DEFAULT_FILE_CAP)
    return n - n % SECTOR_BYTES


@dataclass(frozen=True)
class StreamSpec:
    data_type: DataType
    rate: int  # bytes per second
    packet_bytes: int
    total_bytes: int | None = None
    duration_s: Fraction | None = None
    arrival: Arrival = Arrival.PERIODIC
    file_bytes: int | None = None

    def __post_init__(self):
        if self.rate <= 0:
            raise ConfigError("stream rate must be positive")
        if self.packet_bytes < 1:
            raise ConfigError("packet size must be at least one byte")
        if self.total_bytes is None and self.duration_s is None:
            raise ConfigError("stream needs total_bytes or duration")
        if self.file_bytes is not None and self.file_bytes < 1:
            raise ConfigError("file size must be positive")

    @property
    def is_random(self) -> bool:
        return self.arrival is Arrival.RANDOM

    @property
    def file_limit(self) -> int:
        return self.file_bytes if self.file_bytes is not None else default_file_bytes(self.rate)

    @property
    def interval_ns(self) -> Fraction:
        return Fraction(self.packet_bytes * NS_PER_S, self.rate)

    def byte_limit(self) -> Fraction:
        limits = []
        if self.total_bytes is not None:
            limits.append(Fraction(self.total_bytes))
        if self.duration_s is not None:
            limits.append(Fraction(self.duration_s) * self.rate)
        return min(limits)

    def packet_count(self) -> int:
        return math.floor(self.byte_limit() / self.packet_bytes)


@dataclass(frozen=True)
class WorkloadSpec:
    streams: tuple
    cache_bytes_per_stream: int | None = None  # None: unbounded
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "streams", tuple(self.streams))
        if not self.streams:
            raise ConfigError("workload needs at least one stream")
        if self.cache_bytes_per_stream is not None:
            biggest = max(s.packet_bytes for s in self.streams)
            if self.cache_bytes_per_stream < biggest:
                raise ConfigError("per-stream cache smaller than the largest packet")
        if self.has_random and self.seed is None:
            raise ConfigError("a seed is required when any stream has random arrivals")

    @property
    def has_random(self) -> bool:
        return any(s.is_random for s in self.streams)

    @property
    def periodic_only(self) -> bool:
        return not self.has_random


# --- events ----------------------------------------------------------------


def _stream_times(spec: StreamSpec, idx: int, seed) -> Iterator[int]:
    n = spec.packet_count()
    if spec.arrival is Arrival.PERIODIC:
        step = spec.packet_bytes * NS_PER_S
        for i in range(1, n + 1):
            yield i * step // spec.rate
        return
    rng = np.random.default_rng([int(seed), idx])
    nominal = float(spec.interval_ns)
    t = 0
    chunk = 4096
    done = 0
    while done < n:
        k = min(chunk, n - done)
        gaps = np.rint(nominal * rng.uniform(JITTER_LOW, JITTER_HIGH, size=k)).astype(np.int64)
        for g in gaps:
            t += max(int(g), 1)
            yield t
        done += k


def iter_events(workload: WorkloadSpec, seed=None) -> Iterator[tuple[int, int, int]]:
    """Time-ordered ``(time_ns, stream_index, packet_bytes)``; ties by stream."""
    if seed is None:
        seed = workload.seed
    return heapq.merge(*(_tagged(s, idx, seed) for idx, s in enumerate(workload.streams)))


def _tagged(spec: StreamSpec, idx: int, seed):
    pb = spec.packet_bytes
    for t in _stream_times(spec, idx, seed):
        yield t, idx, pb


def synthesize_events(workload: WorkloadSpec, seed=None) -> list[tuple[int, int, int]]:
    return list(iter_events(workload, seed))


def write_events_csv(events: Iterable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema-version: {SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_ns", "stream", "packet_b"])
        for ev in events:
            w.writerow(ev)


# --- hardware context and features ------------------------------------------


@dataclass(frozen=True)
class HardwareContext:
    timing: FlashTimingParams = field(default_factory=FlashTimingParams)
    cache_bytes: int = 512 * MIB
    compute_score: float = 0.5
    interface_rate: dict = field(
        default_factory=lambda: {
            Interface.ADC: 1_600_000_000,
            Interface.FPGA_INTERNAL: 3_200_000_000,
            Interface.UART: 11_520,
            Interface.USB: 60_000_000,
        }
    )

    def __post_init__(self):
        if not 0.0 <= self.compute_score <= 1.0:
            raise ConfigError("compute score must lie in [0, 1]")
        if self.cache_bytes <= 0:
            raise ConfigError("cache size must be positive")


FEATURE_NAMES = (
    ["log2_file_b", "log2_packet_b", "log2_rate_bps"]
    + [f"type_{t.name.lower()}" for t in DataType]
    + [f"if_{i.name.lower()}" for i in Interface]
    + ["log2_if_rate", "compute", "log2_cache_b", "log2_capacity", "log2_max_write_bps",
       "log10_jump_ratio"]
)
FEATURE_LEN = len(FEATURE_NAMES)
FEATURE_VERSION = 1


def preprocess(spec: StreamSpec, hw: HardwareContext) -> np.ndarray:
    """Encode a stream plus its hardware context as a fixed-length vector."""
    file_b = spec.file_limit
    if spec.packet_bytes <= 0 or spec.rate <= 0 or file_b <= 0:
        raise EncodingError("sizes and rates must be positive")
    iface = INTERFACE_OF[spec.data_type]
    t = hw.timing
    x = np.zeros(FEATURE_LEN)
    x[0] = math.log2(file_b)
    x[1] = math.log2(spec.packet_bytes)
    x[2] = math.log2(spec.rate)
    x[3 + spec.data_type.value] = 1.0
    x[10 + iface.value] = 1.0
    x[14] = math.log2(hw.interface_rate[iface])
    x[15] = hw.compute_score
    x[16] = math.log2(hw.cache_bytes)
    x[17] = math.log2(t.volume_capacity)
    x[18] = math.log2(float(t.write_rate))
    x[19] = math.log10(float(t.jump_ratio))
    if not np.all(np.isfinite(x)):
        raise EncodingError("non-finite feature")
    return x


# --- training grid ---------------------------------------------------------


@dataclass
class TrainingSample:
    sample_id: int
    spec: StreamSpec
    label: object | None = None  # StrategyTuple once labeled
    mu_best: float | None = None

    def __post_init__(self):
        if (self.label is None) != (self.mu_best is None):
            raise ConfigError("label and mu_best are set together")

    def features(self, hw: HardwareContext) -> np.ndarray:
        return preprocess(self.spec, hw)


def _mbps(x):
    return x * MB


def _kbps(x):
    return x * KB


# (data type, rates B/s, packet sizes B)
TRAINING_GRID = (
    (DataType.RADAR_ECHO, [_mbps(r) for r in range(1, 120, 2)], [k * KB for k in range(16, 257, 16)]),
    (DataType.PROC_RESULTS, [_mbps(r) for r in range(1, 33)], [k * KB for k in range(16, 257, 16)]),
    (DataType.STATUS, [_kbps(r) for r in range(16, 1025, 16)], [k * KB for k in range(1, 32, 2)]),
    (DataType.GPS, [_kbps(r) for r in range(2, 11, 2)], [k * KB for k in range(1, 33)]),
    (DataType.SENSOR, [_kbps(r) for r in range(2, 11, 2)], [k * KB for k in range(1, 33)]),
    (DataType.PARAMS, [_kbps(r) for r in range(16, 257, 16)], [k * KB for k in range(1, 33)]),
    (DataType.USB, [_kbps(r) for r in range(128, 16385, 128)], [k * KB for k in range(16, 129, 16)]),
)

TRAINING_COUNTS = {
    DataType.RADAR_ECHO: 960,
    DataType.PROC_RESULTS: 512,
    DataType.STATUS: 1024,
    DataType.GPS: 160,
    DataType.SENSOR: 160,
    DataType.PARAMS: 512,
    DataType.USB: 1024,
}


def generate_training_grid() -> list[TrainingSample]:
    out = []
    for dtype, rates, packets in TRAINING_GRID:
        for rate in rates:
            for pkt in packets:
                file_b = default_file_bytes(rate)
                spec = StreamSpec(dtype, rate, pkt, total_bytes=file_b, file_bytes=file_b)
                out.append(TrainingSample(len(out), spec))
    return out


GRID_HEADER = ["sample_id", "data_type", "rate_bps", "packet_b", "file_b", "label", "mu_best"]


def write_grid_csv(samples: Iterable[TrainingSample], path) -> None:
    from .strategies import format_strategy

    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema-version: {SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for s in samples:
            w.writerow([
                s.sample_id,
                s.spec.data_type.name,
                s.spec.rate,
                s.spec.packet_bytes,
                s.spec.file_limit,
                format_strategy(s.label) if s.label is not None else "",
                repr(s.mu_best) if s.mu_best is not None else "",
            ])


def read_grid_csv(path) -> list[TrainingSample]:
    from .strategies import parse_strategy

    with open(path, encoding="utf-8") as fh:
        rows = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(rows):
        file_b = int(row["file_b"])
        spec = StreamSpec(
            DataType[row["data_type"]], int(row["rate_bps"]), int(row["packet_b"]),
            total_bytes=file_b, file_bytes=file_b,
        )
        label = parse_strategy(row["label"]) if row.get("label") else None
        mu = float(row["mu_best"]) if row.get("mu_best") else None
        out.append(TrainingSample(int(row["sample_id"]), spec, label, mu))
    return out


def with_budget(spec: StreamSpec, budget: int) -> StreamSpec:
    """The same stream truncated to ``budget`` bytes."""
    return replace(spec, total_bytes=min(budget, spec.total_bytes or budget), duration_s=None)
