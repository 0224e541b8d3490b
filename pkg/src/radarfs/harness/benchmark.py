"""Six-workload by five-method benchmark table."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction

from ..errors import ConfigError
from ..flash_model import DEFAULT_TIMING, GIB, KB, MB, FlashTimingParams
from ..strategies import applicable, preset
from ..workload import SCHEMA_VERSION, Arrival, DataType, StreamSpec, WorkloadSpec
from .engine import ModelRef, RunConfig, SimulationReport, resolve_strategy, run_simulation

log = logging.getLogger(__name__)

TEST_BYTES = 2 * GIB
METHODS = ("original", "acpa", "fpfqa", "fpfpa", "model")

# (type, rate B/s, packet B, arrival) for the low-rate random mix
_LOW_RATE_MIX = (
    (DataType.STATUS, 512 * KB, 4 * KB),
    (DataType.GPS, 8 * KB, 1 * KB),
    (DataType.SENSOR, 8 * KB, 1 * KB),
    (DataType.PARAMS, 64 * KB, 4 * KB),
    (DataType.USB, 2 * MB, 64 * KB),
)


def _workload(streams, nbytes, seed):
    """Share ``nbytes`` across streams in proportion to their rates.

    Every stream runs for the same duration and writes one file.
    """
    total_rate = sum(r for _, r, _, _ in streams)
    dur = Fraction(nbytes, total_rate)
    specs = []
    for dtype, rate, pkt, arrival in streams:
        n = int(dur * rate) // pkt * pkt
        specs.append(StreamSpec(dtype, rate, pkt, total_bytes=n, arrival=arrival,
                                file_bytes=max(n, pkt)))
    return WorkloadSpec(tuple(specs), seed=seed)


def benchmark_rows(nbytes=TEST_BYTES, seed=2024) -> list[tuple[str, WorkloadSpec]]:
    P, R = Arrival.PERIODIC, Arrival.RANDOM
    echo = DataType.RADAR_ECHO
    proc = DataType.PROC_RESULTS
    mix = [(d, r, p, R) for d, r, p in _LOW_RATE_MIX]
    rows = [
        ("radar echo 16MB/s", [(echo, 16 * MB, 64 * KB, P)]),
        ("radar echo 80MB/s", [(echo, 80 * MB, 64 * KB, P)]),
        ("echo 16MB/s + processing 1MB/s", [(echo, 16 * MB, 64 * KB, P), (proc, 1 * MB, 16 * KB, P)]),
        ("echo 80MB/s + processing 5MB/s", [(echo, 80 * MB, 64 * KB, P), (proc, 5 * MB, 16 * KB, P)]),
        ("five low-rate mixed random", mix),
        ("echo 80MB/s + five mixed random", [(echo, 80 * MB, 64 * KB, R)] + mix),
    ]
    return [(name, _workload(s, nbytes, seed)) for name, s in rows]


@dataclass
class BenchmarkCell:
    row: str
    method: str
    report: SimulationReport | None  # None: not applicable
    seconds: float = 0.0
    strategy: str = ""

    @property
    def mu(self):
        return None if self.report is None else self.report.mu


@dataclass
class BenchmarkTable:
    cells: dict = field(default_factory=dict)  # (row, method) -> BenchmarkCell
    rows: list = field(default_factory=list)
    methods: tuple = METHODS

    def mu(self, row, method):
        return self.cells[(row, method)].mu

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# schema-version: {SCHEMA_VERSION}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["workload", *self.methods, "model_strategy"])
            for row in self.rows:
                vals = []
                for m in self.methods:
                    mu = self.mu(row, m)
                    vals.append("/" if mu is None else f"{mu:.6g}")
                model = self.cells.get((row, "model"))
                w.writerow([row, *vals, model.strategy if model else ""])


def benchmark_suite(model_path=None, timing: FlashTimingParams = DEFAULT_TIMING,
                    nbytes=TEST_BYTES, seed=2024, methods=METHODS,
                    charge_read_jumps=True) -> BenchmarkTable:
    """Run every benchmark workload under every method."""
    if "model" in methods and model_path is None:
        raise ConfigError("the model column needs a trained model file")
    table = BenchmarkTable(methods=tuple(methods))
    for name, wl in benchmark_rows(nbytes, seed):
        table.rows.append(name)
        for m in methods:
            strat = ModelRef(str(model_path)) if m == "model" else preset(m)
            cfg = RunConfig(wl, strat, timing=timing, seed=seed, charge_read_jumps=charge_read_jumps)
            t, _ = resolve_strategy(cfg)
            if not applicable(t, wl):
                table.cells[(name, m)] = BenchmarkCell(name, m, None, strategy=str(t))
                continue
            t0 = time.perf_counter()
            rep = run_simulation(cfg)
            dt = time.perf_counter() - t0
            log.info("%-34s %-8s mu=%.6g (%.1fs, %s)", name, m, rep.mu, dt, rep.engine)
            table.cells[(name, m)] = BenchmarkCell(name, m, rep, dt, str(t))
    return table
