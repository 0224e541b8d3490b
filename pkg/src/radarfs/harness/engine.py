"""Event-driven simulation engine and its report type."""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from .. import filesystem as fs
from ..errors import ConfigError, ConsistencyViolation
from ..flash_model import DEFAULT_TIMING, FlashTimingParams, elapsed
from ..strategies import (
    Session,
    StrategyTuple,
    check_applicable,
    format_strategy,
    parse_strategy,
    preset_name,
)
from ..workload import HardwareContext, WorkloadSpec, iter_events

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelRef:
    """Strategy chosen at run time by a trained model file."""

    path: str

    def __str__(self):
        return f"model:{self.path}"


@dataclass(frozen=True)
class RunConfig:
    workload: WorkloadSpec
    strategy: object = "original"  # StrategyTuple, preset name, text form or ModelRef
    timing: FlashTimingParams = DEFAULT_TIMING
    seed: int | None = None
    fast_path: bool = True
    charge_read_jumps: bool = True
    # None: fixed strategies do their volume-wide setup outside the window,
    # model-selected ones pay for it in-window
    static_setup: bool | None = None
    fdt_entries: int = fs.DEFAULT_FDT_ENTRIES
    freelist_sectors: int = fs.DEFAULT_FREELIST_SECTORS
    check_consistency: bool = True

    @property
    def effective_seed(self):
        return self.seed if self.seed is not None else self.workload.seed


@dataclass
class SimulationReport:
    strategy: str
    seed: int | None
    total_ns: int
    data_ns: int
    mgmt_ns: int
    mu: float
    mu_exact: str
    counters: dict
    setup_ns: int
    setup_counters: dict
    overflow_events: int
    dropped_bytes: int
    bytes_offered: int
    files_written: int
    write_rate_mb_s: float = 160.0
    engine: str = "event"
    notes: list = field(default_factory=list)

    @property
    def throughput_mb_s(self) -> float:
        """Effective storage rate implied by mu at the medium's write rate."""
        return self.write_rate_mb_s / (1.0 + self.mu)

    def fingerprint(self) -> str:
        """Canonical JSON of every measured field (engine and notes excluded)."""
        d = self.as_dict()
        d.pop("engine")
        d.pop("notes")
        return json.dumps(d, sort_keys=True)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["throughput_mb_s"] = self.throughput_mb_s
        return d

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n")


def resolve_strategy(cfg: RunConfig) -> tuple[StrategyTuple, bool]:
    """Concrete tuple plus whether its volume-wide setup is out of window."""
    s = cfg.strategy
    if isinstance(s, str) and s.startswith("model:"):
        s = ModelRef(s[len("model:"):])
    if isinstance(s, ModelRef):
        from ..policy import load_model, predict_for_workload

        model = load_model(s.path)
        t = predict_for_workload(model, cfg.workload, HardwareContext(timing=cfg.timing))
        static = False if cfg.static_setup is None else cfg.static_setup
        return t, static
    if isinstance(s, str):
        s = parse_strategy(s)
    if not isinstance(s, StrategyTuple):
        raise ConfigError(f"cannot interpret strategy {s!r}")
    static = True if cfg.static_setup is None else cfg.static_setup
    return s, static


def _report(cfg, t, vol_counters, setup_counters, overflow, dropped, offered, files, engine, notes):
    timing = cfg.timing
    data_ns = vol_counters.data_ns(timing)
    mgmt_ns = vol_counters.mgmt_ns(timing)
    if data_ns == 0:
        raise ConfigError("no data reached the medium; mu is undefined")
    mu = Fraction(mgmt_ns) / Fraction(data_ns)
    name = preset_name(t)
    return SimulationReport(
        strategy=format_strategy(t) if name is None else f"{name}:{format_strategy(t)}",
        seed=cfg.effective_seed,
        total_ns=_as_int(data_ns + mgmt_ns),
        data_ns=_as_int(data_ns),
        mgmt_ns=_as_int(mgmt_ns),
        mu=float(mu),
        mu_exact=f"{mu.numerator}/{mu.denominator}",
        counters=vol_counters.as_dict(),
        setup_ns=_as_int(setup_counters.total_ns(timing)),
        setup_counters=setup_counters.as_dict(),
        overflow_events=overflow,
        dropped_bytes=dropped,
        bytes_offered=offered,
        files_written=files,
        engine=engine,
        notes=list(notes),
        write_rate_mb_s=float(timing.write_rate) / 1e6,
    )


def _as_int(x):
    # durations are whole ns for sector-granular traffic; keep exactness otherwise
    return int(x) if Fraction(x).denominator == 1 else float(x)


def _check_conservation(timing, counters, setup, receipt_bytes, receipt_jumps):
    measured = counters.data_ns(timing) + counters.mgmt_ns(timing)
    if measured != counters.total_ns(timing):
        raise AssertionError("total time differs from data + management time")
    whole = elapsed(timing, receipt_bytes, receipt_jumps)
    if whole != measured + setup.total_ns(timing):
        raise AssertionError(
            f"receipts sum to {whole} ns but counters account for "
            f"{measured + setup.total_ns(timing)} ns"
        )


def run_event_mode(cfg: RunConfig, t: StrategyTuple, static_setup: bool, notes=()) -> SimulationReport:
    wl = cfg.workload
    timing = cfg.timing
    vol = fs.format_volume(timing, cfg.fdt_entries, cfg.charge_read_jumps, cfg.freelist_sectors)
    sess = Session(t, vol, static_setup=static_setup)
    limits = [s.file_limit for s in wl.streams]
    cap = wl.cache_bytes_per_stream

    # device clock in units of 1/den ns so every duration is an integer
    num, den = timing.t_w.numerator, timing.t_w.denominator
    jump_scaled = timing.t_jump * den
    sum_b = sum_j = 0
    clock = 0

    r = sess.mount()
    sum_b, sum_j = r.bytes, r.jumps
    # static setup happens before recording starts, so only in-window work delays packets
    in_window = r.bytes * num + r.jumps * jump_scaled - vol.setup_counters.total_ns(timing) * den
    clock = int(in_window)

    overflow = dropped = offered = 0
    fifo: deque = deque()
    queued = [0] * len(wl.streams)
    deliver = sess.deliver

    if cap is None:
        # without a bound nothing is ever dropped, so service order is arrival order
        for _, s, b in iter_events(wl, cfg.effective_seed):
            offered += b
            r = deliver(s, b, limits[s])
            sum_b += r.bytes
            sum_j += r.jumps
    else:
        for at, s, b in iter_events(wl, cfg.effective_seed):
            offered += b
            now = at * den
            while fifo and clock <= now:
                pat, ps, pb = fifo.popleft()
                queued[ps] -= pb
                r = deliver(ps, pb, limits[ps])
                sum_b += r.bytes
                sum_j += r.jumps
                clock = max(clock, pat * den) + r.bytes * num + r.jumps * jump_scaled
            if queued[s] + b > cap:
                overflow += 1
                dropped += b
                continue
            fifo.append((at, s, b))
            queued[s] += b
        while fifo:
            _, ps, pb = fifo.popleft()
            r = deliver(ps, pb, limits[ps])
            sum_b += r.bytes
            sum_j += r.jumps

    r = sess.finish()
    sum_b += r.bytes
    sum_j += r.jumps
    _check_conservation(timing, vol.counters, vol.setup_counters, sum_b, sum_j)

    if cfg.check_consistency:
        bad = fs.verify_consistency(vol)
        if bad:
            raise ConsistencyViolation(bad, fs.dump_state(vol))
    if overflow:
        log.info("%d packets dropped on cache overflow", overflow)
    return _report(cfg, t, vol.counters, vol.setup_counters, overflow, dropped, offered,
                   sess.files_written, "event", notes)


def run_simulation(cfg: RunConfig) -> SimulationReport:
    """Simulate one workload under one strategy and report mu."""
    t, static_setup = resolve_strategy(cfg)
    check_applicable(t, cfg.workload)
    notes = []
    if cfg.fast_path:
        from .fastpath import FastPathUnsupported, run_fast_path

        try:
            return run_fast_path(cfg, t, static_setup)
        except FastPathUnsupported as e:
            notes.append(f"fast path not used: {e}")
    return run_event_mode(cfg, t, static_setup, notes)
