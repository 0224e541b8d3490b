"""File-management strategy space and the hooks that drive a Volume.

A ``StrategyTuple`` fixes one method per dimension: FAT query, FAT update,
FDT query, FDT update and data-region write.  The four published baselines
are presets over that space.  A ``Session`` owns one Volume and applies a
tuple to a stream of packets, returning the flash cost of every hook.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

from . import filesystem as fs
from .errors import ConfigError, InapplicableStrategy
from .filesystem import NO_COST, FatQueryMethod, FdtQueryMethod, Receipt

BATCH_RANGE = range(1, 65)
BURST_RANGE = range(1, 33)


class FatUpdate(enum.Enum):
    PER_CLUSTER = 0
    FILE_PREALLOC = 1
    FULL_PREALLOC = 2
    BATCH_DEFERRED = 3


class FdtUpdate(enum.Enum):
    PER_CLUSTER = 0
    PER_PACKET = 1
    PER_FILE_CLOSE = 2
    BATCH_DEFERRED = 3


class DataWrite(enum.Enum):
    PER_SECTOR = 0
    PER_CLUSTER = 1
    BURST = 2


class Preset(enum.Enum):
    ORIGINAL_FAT = "original"
    ACPA = "acpa"
    FPFQA = "fpfqa"
    FPFPA = "fpfpa"


@dataclass(frozen=True)
class StrategyTuple:
    fat_query: FatQueryMethod
    fat_update: FatUpdate
    fdt_query: FdtQueryMethod
    fdt_update: FdtUpdate
    data_write: DataWrite
    fat_batch: int | None = None
    fdt_batch: int | None = None
    burst: int | None = None

    def __post_init__(self):
        if (self.fat_update is FatUpdate.BATCH_DEFERRED) != (self.fat_batch is not None):
            raise ConfigError("fat_batch is required exactly for BATCH_DEFERRED")
        if (self.fdt_update is FdtUpdate.BATCH_DEFERRED) != (self.fdt_batch is not None):
            raise ConfigError("fdt_batch is required exactly for BATCH_DEFERRED")
        if (self.data_write is DataWrite.BURST) != (self.burst is not None):
            raise ConfigError("burst size is required exactly for BURST")
        for n in (self.fat_batch, self.fdt_batch):
            if n is not None and n not in BATCH_RANGE:
                raise ConfigError(f"batch size {n} outside 1..64")
        if self.burst is not None and self.burst not in BURST_RANGE:
            raise ConfigError(f"burst size {self.burst} outside 1..32")
        if (
            self.fat_update is FatUpdate.FULL_PREALLOC
            and self.fat_query is not FatQueryMethod.PRESCAN_ALL
        ):
            raise ConfigError("FULL_PREALLOC requires PRESCAN_ALL")

    def sort_key(self):
        return (
            self.fat_query.value,
            self.fat_update.value,
            self.fat_batch or 0,
            self.fdt_query.value,
            self.fdt_update.value,
            self.fdt_batch or 0,
            self.data_write.value,
            self.burst or 0,
        )

    def __lt__(self, other):
        return self.sort_key() < other.sort_key()

    def classes(self) -> tuple[int, int, int, int, int]:
        """Per-dimension class indices (parameters dropped)."""
        return (
            self.fat_query.value,
            self.fat_update.value,
            self.fdt_query.value,
            self.fdt_update.value,
            self.data_write.value,
        )

    def to_text(self) -> str:
        return format_strategy(self)

    def __str__(self):
        return format_strategy(self)


HEAD_SIZES = (len(FatQueryMethod), len(FatUpdate), len(FdtQueryMethod), len(FdtUpdate), len(DataWrite))

_FATQ = {"scan": FatQueryMethod.SCAN_ON_DEMAND, "freelist": FatQueryMethod.CACHED_FREELIST,
         "prescan": FatQueryMethod.PRESCAN_ALL}
_FDTQ = {"scan": FdtQueryMethod.SCAN_ON_DEMAND, "cached": FdtQueryMethod.CACHED_DIR}
_FATU = {"per_cluster": FatUpdate.PER_CLUSTER, "file_prealloc": FatUpdate.FILE_PREALLOC,
         "full_prealloc": FatUpdate.FULL_PREALLOC}
_FDTU = {"per_cluster": FdtUpdate.PER_CLUSTER, "per_packet": FdtUpdate.PER_PACKET,
         "close": FdtUpdate.PER_FILE_CLOSE}
_DATA = {"sector": DataWrite.PER_SECTOR, "cluster": DataWrite.PER_CLUSTER}


def _inv(d):
    return {v: k for k, v in d.items()}


def format_strategy(t: StrategyTuple) -> str:
    fatu = f"batch{t.fat_batch}" if t.fat_batch is not None else _inv(_FATU)[t.fat_update]
    fdtu = f"batch{t.fdt_batch}" if t.fdt_batch is not None else _inv(_FDTU)[t.fdt_update]
    data = f"burst{t.burst}" if t.burst is not None else _inv(_DATA)[t.data_write]
    return (
        f"fatq={_inv(_FATQ)[t.fat_query]},fatu={fatu},"
        f"fdtq={_inv(_FDTQ)[t.fdt_query]},fdtu={fdtu},data={data}"
    )


def _param(value: str, prefix: str) -> int | None:
    if value.startswith(prefix) and value[len(prefix):].isdigit():
        return int(value[len(prefix):])
    return None


def parse_strategy(text: str) -> StrategyTuple:
    """Parse the canonical ``fatq=..,fatu=..,fdtq=..,fdtu=..,data=..`` form.

    A bare preset name (``original``, ``acpa``, ``fpfqa``, ``fpfpa``) is
    also accepted.
    """
    text = text.strip()
    try:
        return preset(Preset(text.lower()))
    except ValueError:
        pass
    try:
        parts = dict(p.split("=", 1) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"malformed strategy {text!r}") from None
    if set(parts) != {"fatq", "fatu", "fdtq", "fdtu", "data"}:
        raise ConfigError(f"strategy needs exactly fatq,fatu,fdtq,fdtu,data: {text!r}")
    try:
        fat_batch = _param(parts["fatu"], "batch")
        fdt_batch = _param(parts["fdtu"], "batch")
        burst = _param(parts["data"], "burst")
        return StrategyTuple(
            fat_query=_FATQ[parts["fatq"]],
            fat_update=FatUpdate.BATCH_DEFERRED if fat_batch is not None else _FATU[parts["fatu"]],
            fdt_query=_FDTQ[parts["fdtq"]],
            fdt_update=FdtUpdate.BATCH_DEFERRED if fdt_batch is not None else _FDTU[parts["fdtu"]],
            data_write=DataWrite.BURST if burst is not None else _DATA[parts["data"]],
            fat_batch=fat_batch,
            fdt_batch=fdt_batch,
            burst=burst,
        )
    except KeyError as e:
        raise ConfigError(f"unknown strategy value {e} in {text!r}") from None


_PRESETS = {
    Preset.ORIGINAL_FAT: StrategyTuple(
        FatQueryMethod.SCAN_ON_DEMAND, FatUpdate.PER_CLUSTER,
        FdtQueryMethod.SCAN_ON_DEMAND, FdtUpdate.PER_CLUSTER, DataWrite.PER_CLUSTER,
    ),
    Preset.ACPA: StrategyTuple(
        FatQueryMethod.PRESCAN_ALL, FatUpdate.FILE_PREALLOC,
        FdtQueryMethod.CACHED_DIR, FdtUpdate.PER_FILE_CLOSE, DataWrite.PER_CLUSTER,
    ),
    Preset.FPFQA: StrategyTuple(
        FatQueryMethod.PRESCAN_ALL, FatUpdate.FULL_PREALLOC,
        FdtQueryMethod.CACHED_DIR, FdtUpdate.PER_FILE_CLOSE, DataWrite.BURST, burst=8,
    ),
    Preset.FPFPA: StrategyTuple(
        FatQueryMethod.CACHED_FREELIST, FatUpdate.BATCH_DEFERRED,
        FdtQueryMethod.CACHED_DIR, FdtUpdate.BATCH_DEFERRED, DataWrite.PER_CLUSTER,
        fat_batch=16, fdt_batch=16,
    ),
}


def preset(name) -> StrategyTuple:
    if isinstance(name, str):
        try:
            name = Preset[name.upper()]
        except KeyError:
            name = Preset(name.lower())
    return _PRESETS[name]


def preset_name(t: StrategyTuple) -> str | None:
    for k, v in _PRESETS.items():
        if v == t:
            return k.name
    return None


def applicable(t: StrategyTuple, workload) -> bool:
    """Whole-volume pre-allocation needs a fixed, predictable write order."""
    if t.fat_update is not FatUpdate.FULL_PREALLOC:
        return True
    streams = workload.streams
    return not (len(streams) >= 2 and any(s.is_random for s in streams))


def strategy_grid(batches=(4, 16, 64), bursts=(1, 8, 32)) -> list[StrategyTuple]:
    """Every valid tuple with the given parameter choices, plus the presets."""
    fatu = [(FatUpdate.PER_CLUSTER, None), (FatUpdate.FILE_PREALLOC, None),
            (FatUpdate.FULL_PREALLOC, None)] + [(FatUpdate.BATCH_DEFERRED, n) for n in batches]
    fdtu = [(FdtUpdate.PER_CLUSTER, None), (FdtUpdate.PER_PACKET, None),
            (FdtUpdate.PER_FILE_CLOSE, None)] + [(FdtUpdate.BATCH_DEFERRED, n) for n in batches]
    data = [(DataWrite.PER_SECTOR, None), (DataWrite.PER_CLUSTER, None)] + [
        (DataWrite.BURST, k) for k in bursts
    ]
    out = set(_PRESETS.values())
    for fq, (fu, fb), dq, (du, db), (dw, k) in itertools.product(
        FatQueryMethod, fatu, FdtQueryMethod, fdtu, data
    ):
        if fu is FatUpdate.FULL_PREALLOC and fq is not FatQueryMethod.PRESCAN_ALL:
            continue
        out.add(StrategyTuple(fq, fu, dq, du, dw, fat_batch=fb, fdt_batch=db, burst=k))
    return sorted(out)


# --- execution -------------------------------------------------------------


def _add(a: Receipt, b: Receipt) -> Receipt:
    return Receipt(a.bytes + b.bytes, a.jumps + b.jumps)


@dataclass
class OpenFile:
    idx: int
    stream: int
    limit: int  # rotate after this many bytes
    received: int = 0  # bytes accepted from packets
    committed: int = 0  # bytes durably on flash
    clusters: list = field(default_factory=list)
    flushed_size: int = -1  # size last written to the FDT
    flushed_first: int | None = None

    @property
    def buffered(self):
        return self.received - self.committed


class Session:
    """Applies one strategy tuple to one Volume.

    ``static_setup`` marks whole-volume preparation (pre-scan, directory
    caching, whole-FAT claim and its final release) as done outside the
    measured window, the way a fixed method configured before a recording
    session would be.  A runtime-selected strategy pays for it in-window.
    """

    def __init__(self, strategy: StrategyTuple, vol: fs.Volume, static_setup: bool = True):
        self.t = strategy
        self.vol = vol
        self.static_setup = static_setup
        self.open_files: dict[int, OpenFile] = {}
        self.fat_closed = 0
        self.fdt_closed = 0
        self.files_written = 0
        self.mounted = False
        self.finished = False

    # -- phase helpers

    def _setup_phase(self, flag: bool):
        self.vol.in_setup = flag and self.static_setup

    def mount(self) -> Receipt:
        if self.mounted:
            return NO_COST
        self.mounted = True
        vol, t = self.vol, self.t
        r = NO_COST
        self._setup_phase(True)
        try:
            if t.fat_query is FatQueryMethod.PRESCAN_ALL:
                r = _add(r, fs.prescan_fat(vol))
            if t.fdt_query is FdtQueryMethod.CACHED_DIR:
                r = _add(r, fs.cache_directory(vol))
            if t.fat_update is FatUpdate.FULL_PREALLOC:
                r = _add(r, fs.claim_pool(vol, t.fat_query))
        finally:
            self._setup_phase(False)
        return r

    # -- hooks

    def on_file_open(self, stream: int, limit: int) -> tuple[OpenFile, Receipt]:
        if stream in self.open_files:
            raise ConfigError(f"stream {stream} already has an open file")
        vol, t = self.vol, self.t
        r = self.mount()
        idx, q = fs.find_free_fdt_slot(vol, t.fdt_query)
        r = _add(r, q)
        fs.create_fdt_entry(vol, idx)
        f = OpenFile(idx=idx, stream=stream, limit=limit)
        self.open_files[stream] = f
        if t.fat_update is FatUpdate.FILE_PREALLOC:
            r = _add(r, fs.claim_pool(vol, t.fat_query))
        return f, r

    def _allocate(self, f: OpenFile) -> Receipt:
        vol, t = self.vol, self.t
        prev = f.clusters[-1] if f.clusters else None
        r = NO_COST
        if t.fat_update in (FatUpdate.FILE_PREALLOC, FatUpdate.FULL_PREALLOC):
            if vol.fat.pool is None:
                r = fs.claim_pool(vol, t.fat_query)
            c = fs.take_from_pool(vol, prev, f.idx)
        else:
            c, r = fs.find_free_cluster(vol, t.fat_query)
            fs.link_cluster(vol, prev, c, f.idx)
        if prev is None:
            vol.fdt[f.idx].first_cluster = c
        f.clusters.append(c)
        return r

    def _write(self, f: OpenFile, start: int, end: int) -> Receipt:
        """Program logical bytes [start, end) of the file, sector-rounded."""
        vol, t = self.vol, self.t
        cb = vol.cluster_bytes
        start -= start % fs.SECTOR_BYTES
        end_phys = -(-end // fs.SECTOR_BYTES) * fs.SECTOR_BYTES
        need = -(-end_phys // cb) - len(f.clusters)
        r = NO_COST
        for _ in range(need):
            r = _add(r, self._allocate(f))
        pos = start
        while pos < end_phys:
            k, off = divmod(pos, cb)
            n = min(cb - off, end_phys - pos)
            r = _add(r, fs.write_cluster_data(vol, f.clusters[k], n, off))
            pos += n
        f.committed = end
        entry = vol.fdt[f.idx]
        entry.size = end
        if need > 0:
            if t.fat_update is FatUpdate.PER_CLUSTER:
                r = _add(r, fs.flush_fat(vol))
            if t.fdt_update is FdtUpdate.PER_CLUSTER:
                r = _add(r, self._flush_entry(f))
        return r

    def _flush_entry(self, f: OpenFile) -> Receipt:
        entry = self.vol.fdt[f.idx]
        if entry.size != f.flushed_size or entry.first_cluster != f.flushed_first:
            fs.touch_fdt_entry(self.vol, f.idx)
        f.flushed_size, f.flushed_first = entry.size, entry.first_cluster
        return fs.flush_fdt(self.vol)

    def _drain(self, f: OpenFile, final: bool) -> Receipt:
        t, cb = self.t, self.vol.cluster_bytes
        r = NO_COST
        if t.data_write is DataWrite.PER_SECTOR:
            if f.buffered > 0:
                r = self._write(f, f.committed, f.received)
            return r
        unit = cb if t.data_write is DataWrite.PER_CLUSTER else cb * t.burst
        while f.buffered >= unit:
            r = _add(r, self._write(f, f.committed, f.committed + unit))
        if final and f.buffered > 0:
            r = _add(r, self._write(f, f.committed, f.received))
        return r

    def on_packet(self, f: OpenFile, nbytes: int) -> Receipt:
        """Accept bytes into an open file (never beyond its limit)."""
        if nbytes <= 0 or f.received + nbytes > f.limit:
            raise ValueError("packet does not fit in the file")
        f.received += nbytes
        return self._drain(f, final=False)

    def on_file_close(self, f: OpenFile) -> Receipt:
        vol, t = self.vol, self.t
        r = self._drain(f, final=True)
        entry = vol.fdt[f.idx]
        entry.size = f.committed
        entry.is_open = False
        prealloc = t.fat_update in (FatUpdate.FILE_PREALLOC, FatUpdate.FULL_PREALLOC)
        if prealloc and f.clusters:
            fs.mark_tail_eoc(vol, f.clusters[-1])
        if t.fat_update is FatUpdate.FILE_PREALLOC:
            fs.release_pool(vol)
            rel = fs.flush_fat(vol)
            vol.active_counters.prealloc_release_bytes += rel.bytes
            r = _add(r, rel)
        elif t.fat_update is FatUpdate.PER_CLUSTER:
            r = _add(r, fs.flush_fat(vol))
        elif t.fat_update is FatUpdate.BATCH_DEFERRED:
            self.fat_closed += 1
            if self.fat_closed % t.fat_batch == 0:
                r = _add(r, fs.flush_fat(vol))
        if t.fdt_update is FdtUpdate.BATCH_DEFERRED:
            if entry.size != f.flushed_size or entry.first_cluster != f.flushed_first:
                fs.touch_fdt_entry(vol, f.idx)
                f.flushed_size, f.flushed_first = entry.size, entry.first_cluster
            self.fdt_closed += 1
            if self.fdt_closed % t.fdt_batch == 0:
                r = _add(r, fs.flush_fdt(vol))
        else:
            r = _add(r, self._flush_entry(f))
        del self.open_files[f.stream]
        self.files_written += 1
        return r

    def after_packet(self, f: OpenFile | None) -> Receipt:
        if f is not None and self.t.fdt_update is FdtUpdate.PER_PACKET:
            return self._flush_entry(f)
        return NO_COST

    # -- stream-level driver

    def deliver(self, stream: int, nbytes: int, file_bytes: int) -> Receipt:
        """Route one packet of a stream into its file(s), rotating at the limit."""
        r = NO_COST
        remaining = nbytes
        f = self.open_files.get(stream)
        while remaining > 0:
            if f is None:
                f, q = self.on_file_open(stream, file_bytes)
                r = _add(r, q)
            take = min(remaining, f.limit - f.received)
            r = _add(r, self.on_packet(f, take))
            remaining -= take
            if f.received >= f.limit:
                r = _add(r, self.on_file_close(f))
                f = None
        return _add(r, self.after_packet(f))

    def finish(self) -> Receipt:
        """Close every file, then bring all metadata on flash up to date."""
        if self.finished:
            return NO_COST
        vol, t = self.vol, self.t
        r = self.mount()
        for stream in sorted(self.open_files):
            r = _add(r, self.on_file_close(self.open_files[stream]))
        if t.fat_update is FatUpdate.FULL_PREALLOC:
            self._setup_phase(True)
            try:
                fs.release_pool(vol)
                rel = fs.flush_fat(vol)
                vol.active_counters.prealloc_release_bytes += rel.bytes
                r = _add(r, rel)
            finally:
                self._setup_phase(False)
        r = _add(r, fs.flush_fat(vol))
        r = _add(r, fs.flush_fdt(vol))
        self.finished = True
        return r


def check_applicable(t: StrategyTuple, workload) -> None:
    if not applicable(t, workload):
        raise InapplicableStrategy(
            f"{format_strategy(t)} needs a fixed write pattern; workload interleaves "
            f"{len(workload.streams)} streams with random arrivals"
        )
