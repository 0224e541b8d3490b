"""Logical FAT volume: two mirrored FATs, one FDT and the data region.

Nothing here touches real bytes.  Each mutation marks 512 B metadata
sectors dirty, and each flush or data write returns a ``Receipt`` of
(bytes, jumps) that ``flash_model.elapsed`` converts into time.

Flash address layout (sector numbers)::

    [FAT mirror 0][FAT mirror 1][FDT][1 reserved sector][data clusters ...]

The reserved sector keeps the metadata and data regions from ever being
address-contiguous, so a data write following any metadata write always
pays a jump.

FAT values are Python ints: ``FREE`` and ``EOC`` are negative sentinels,
anything else is the index of the next cluster.  Bulk claims (whole-volume
pre-allocation) are kept as an implicit range ``pool = (lo, hi)`` whose
entries read as ``i -> i + 1`` with ``EOC`` at ``hi - 1``; this keeps a
67M-entry FAT cheap to claim and release.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

from .errors import ConfigError, CorruptChain, DoubleAllocate, VolumeFull
from .flash_model import (
    FAT_ENTRIES_PER_SECTOR,
    FDT_ENTRIES_PER_SECTOR,
    SECTOR_BYTES,
    FlashTimingParams,
    elapsed,
)

FREE = -1
EOC = -2

DEFAULT_FDT_ENTRIES = 65536
DEFAULT_FREELIST_SECTORS = 16


class FatQueryMethod(enum.Enum):
    SCAN_ON_DEMAND = 0
    CACHED_FREELIST = 1
    PRESCAN_ALL = 2


class FdtQueryMethod(enum.Enum):
    SCAN_ON_DEMAND = 0
    CACHED_DIR = 1


class Receipt(NamedTuple):
    bytes: int
    jumps: int


NO_COST = Receipt(0, 0)


class DirtySectors:
    """Set of sector indices, with cheap bulk ranges."""

    def __init__(self):
        self._points: set[int] = set()
        self._ranges: list[tuple[int, int]] = []  # half-open

    def mark(self, sector: int):
        self._points.add(sector)

    def mark_range(self, lo: int, hi: int):
        if hi > lo:
            self._ranges.append((lo, hi))

    def runs(self) -> list[tuple[int, int]]:
        """Maximal runs of consecutive dirty sectors, half-open, sorted."""
        if not self._ranges:
            if not self._points:
                return []
            pts = sorted(self._points)
            out = []
            lo = prev = pts[0]
            for p in pts[1:]:
                if p != prev + 1:
                    out.append((lo, prev + 1))
                    lo = p
                prev = p
            out.append((lo, prev + 1))
            return out
        spans = sorted(self._ranges + [(p, p + 1) for p in self._points])
        out = []
        lo, hi = spans[0]
        for a, b in spans[1:]:
            if a <= hi:
                hi = max(hi, b)
            else:
                out.append((lo, hi))
                lo, hi = a, b
        out.append((lo, hi))
        return out

    def clear(self):
        self._points.clear()
        self._ranges.clear()

    def __bool__(self):
        return bool(self._points) or bool(self._ranges)

    def __contains__(self, sector):
        if sector in self._points:
            return True
        return any(lo <= sector < hi for lo, hi in self._ranges)

    def __len__(self):
        return sum(hi - lo for lo, hi in self.runs())


@dataclass
class MetadataCounters:
    data_bytes: int = 0
    data_jumps: int = 0
    # subset of data_jumps caused by a metadata write or read displacing the head
    induced_jumps: int = 0
    fat_sector_writes: int = 0
    fat_jumps: int = 0
    fdt_sector_writes: int = 0
    fdt_jumps: int = 0
    read_sectors: int = 0
    read_jumps: int = 0
    prealloc_release_bytes: int = 0

    @property
    def fat_bytes(self):
        return self.fat_sector_writes * SECTOR_BYTES

    @property
    def fdt_bytes(self):
        return self.fdt_sector_writes * SECTOR_BYTES

    def data_ns(self, timing):
        return elapsed(timing, self.data_bytes, self.data_jumps - self.induced_jumps)

    def mgmt_ns(self, timing):
        return elapsed(
            timing,
            self.fat_bytes + self.fdt_bytes,
            self.fat_jumps + self.fdt_jumps + self.read_jumps + self.induced_jumps,
        )

    def total_ns(self, timing):
        return elapsed(
            timing,
            self.data_bytes + self.fat_bytes + self.fdt_bytes,
            self.data_jumps + self.fat_jumps + self.fdt_jumps + self.read_jumps,
        )

    def as_dict(self):
        return asdict(self)


@dataclass
class FatTable:
    n_entries: int
    links: dict = field(default_factory=dict)
    pool: tuple | None = None
    # range whose on-flash FAT content is the sequential claim chain
    claimed: tuple | None = None
    dirty: DirtySectors = field(default_factory=DirtySectors)
    mirror_count: int = 2
    mirror_sector_writes: list = field(default_factory=lambda: [0, 0])
    high_water: int = 0  # one past the highest explicitly linked cluster

    @property
    def n_sectors(self):
        return -(-self.n_entries // FAT_ENTRIES_PER_SECTOR)

    def in_pool(self, c):
        return self.pool is not None and self.pool[0] <= c < self.pool[1]

    def get(self, c):
        v = self.links.get(c)
        if v is not None:
            return v
        if self.in_pool(c):
            return c + 1 if c + 1 < self.pool[1] else EOC
        return FREE

    def is_free(self, c):
        return c not in self.links and not self.in_pool(c)

    def free_count(self):
        pooled = self.pool[1] - self.pool[0] if self.pool else 0
        return self.n_entries - len(self.links) - pooled


@dataclass
class FdtEntry:
    name: str
    size: int = 0
    first_cluster: int | None = None
    is_open: bool = True
    # in-memory bookkeeping, not part of the 32 B record
    last_cluster: int | None = None
    n_clusters: int = 0

    def as_dict(self):
        return {
            "name": self.name,
            "size": self.size,
            "first_cluster": self.first_cluster,
            "open": self.is_open,
        }


def fat_sector(cluster: int) -> int:
    return cluster // FAT_ENTRIES_PER_SECTOR


def fdt_sector(index: int) -> int:
    return index // FDT_ENTRIES_PER_SECTOR


class Volume:
    """Mutable file-system state owned by one simulation."""

    def __init__(
        self,
        timing: FlashTimingParams,
        fdt_entries: int = DEFAULT_FDT_ENTRIES,
        charge_read_jumps: bool = True,
        freelist_sectors: int = DEFAULT_FREELIST_SECTORS,
    ):
        self.timing = timing
        self.cluster_bytes = timing.cluster_bytes
        self.fat = FatTable(timing.n_clusters)
        self.fdt: list[FdtEntry] = []
        self.fdt_capacity = fdt_entries
        self.fdt_dirty = DirtySectors()
        self.owner: dict[int, int] = {}
        self.charge_read_jumps = charge_read_jumps
        self.freelist_sectors = freelist_sectors

        nfs = self.fat.n_sectors
        self.fat_base = (0, nfs)
        self.fdt_base = 2 * nfs
        self.fdt_n_sectors = -(-fdt_entries // FDT_ENTRIES_PER_SECTOR)
        self.data_base = self.fdt_base + self.fdt_n_sectors + 1

        # formatting writes the tables last, so the head starts in the
        # metadata region and the first data write is a metadata-induced jump
        self.last_written_sector: int | None = self.fdt_base + self.fdt_n_sectors - 1
        self.last_op: str | None = "meta"  # "data" | "meta" | "read"

        self.counters = MetadataCounters()
        self.setup_counters = MetadataCounters()
        self.in_setup = False

        self.next_free_hint = 0
        self.fat_cache_sector: int | None = None
        self.fdt_cache_sector: int | None = None
        self.freelist: deque = deque()
        self.prescanned = False
        self.dir_cached = False

    @property
    def active_counters(self) -> MetadataCounters:
        return self.setup_counters if self.in_setup else self.counters

    def data_sector(self, cluster: int, offset: int = 0) -> int:
        return (
            self.data_base
            + cluster * self.timing.sectors_per_cluster
            + offset // SECTOR_BYTES
        )

    def __repr__(self):
        return (
            f"Volume(clusters={self.fat.n_entries}, used={len(self.fat.links)}, "
            f"files={len(self.fdt)})"
        )


def format_volume(
    timing: FlashTimingParams,
    fdt_entries: int = DEFAULT_FDT_ENTRIES,
    charge_read_jumps: bool = True,
    freelist_sectors: int = DEFAULT_FREELIST_SECTORS,
) -> Volume:
    if timing.volume_capacity % timing.cluster_bytes:
        raise ConfigError("volume capacity is not cluster-aligned")
    if fdt_entries < 1 or freelist_sectors < 1:
        raise ConfigError("fdt_entries and freelist_sectors must be positive")
    return Volume(timing, fdt_entries, charge_read_jumps, freelist_sectors)


# --- reads -----------------------------------------------------------------


def _read(vol: Volume, address: int, sectors: int, jumps: int) -> Receipt:
    if not vol.charge_read_jumps or jumps == 0:
        return NO_COST
    c = vol.active_counters
    c.read_sectors += sectors
    c.read_jumps += jumps
    vol.last_written_sector = address
    vol.last_op = "read"
    return Receipt(0, jumps)


def _lowest_free_from(vol: Volume, start: int) -> int | None:
    fat = vol.fat
    n = fat.n_entries
    if fat.free_count() <= 0:
        return None
    c = start % n
    wrapped = False
    while True:
        if c >= n:
            if wrapped:
                return None
            c, wrapped = 0, True
        if wrapped and c >= start:
            return None
        if fat.pool is not None and fat.pool[0] <= c < fat.pool[1]:
            c = fat.pool[1]
        elif c in fat.links:
            c += 1
        else:
            return c


def prescan_fat(vol: Volume) -> Receipt:
    """One contiguous pass over mirror 0 to build the full free list."""
    vol.prescanned = True
    return _read(vol, vol.fat_base[0], vol.fat.n_sectors, 1)


def cache_directory(vol: Volume) -> Receipt:
    vol.dir_cached = True
    return _read(vol, vol.fdt_base, vol.fdt_n_sectors, 1)


def _scan_sectors(vol: Volume, sectors, cache_attr: str, base: int) -> Receipt:
    """Sequential scan with a one-sector read cache."""
    reads = 0
    cached = getattr(vol, cache_attr)
    last = None
    for s in sectors:
        if s != cached:
            reads += 1
            cached = s
        last = s
    setattr(vol, cache_attr, cached)
    if last is None:
        return NO_COST
    return _read(vol, base + last, reads, reads)


def _fat_scan_path(vol: Volume, start: int, found: int):
    s0, s1 = fat_sector(start), fat_sector(found)
    if found >= start:
        return range(s0, s1 + 1)
    return list(range(s0, vol.fat.n_sectors)) + list(range(0, s1 + 1))


def _refill_freelist(vol: Volume, start: int) -> Receipt:
    first = _lowest_free_from(vol, start)
    if first is None:
        raise VolumeFull("no free cluster")
    fat = vol.fat
    s0 = fat_sector(first)
    s1 = min(fat.n_sectors, s0 + vol.freelist_sectors)
    hi = min(fat.n_entries, s1 * FAT_ENTRIES_PER_SECTOR)
    c = first
    while c < hi:
        if fat.pool is not None and fat.pool[0] <= c < fat.pool[1]:
            c = fat.pool[1]
            continue
        if c not in fat.links:
            vol.freelist.append(c)
        c += 1
    return _read(vol, vol.fat_base[0] + s0, s1 - s0, 1)


def find_free_cluster(vol: Volume, method: FatQueryMethod, hint: int | None = None):
    """Lowest FREE cluster at or after ``hint`` (wrapping once).

    Returns ``(cluster, receipt)``; the receipt holds the read cost of the
    query (zero unless the method has to touch the FAT on flash).
    """
    fat = vol.fat
    if fat.free_count() <= 0:
        raise VolumeFull("no free cluster")
    if hint is None:
        hint = vol.next_free_hint
    hint %= fat.n_entries
    if method is FatQueryMethod.SCAN_ON_DEMAND:
        c = _lowest_free_from(vol, hint)
        if c is None:
            raise VolumeFull("no free cluster")
        r = _scan_sectors(vol, _fat_scan_path(vol, hint, c), "fat_cache_sector", vol.fat_base[0])
        return c, r
    if method is FatQueryMethod.CACHED_FREELIST:
        cost = NO_COST
        while True:
            while vol.freelist and not fat.is_free(vol.freelist[0]):
                vol.freelist.popleft()
            if vol.freelist:
                return vol.freelist[0], cost
            r = _refill_freelist(vol, hint)
            cost = Receipt(cost.bytes + r.bytes, cost.jumps + r.jumps)
    if method is FatQueryMethod.PRESCAN_ALL:
        cost = NO_COST if vol.prescanned else prescan_fat(vol)
        c = _lowest_free_from(vol, hint)
        if c is None:
            raise VolumeFull("no free cluster")
        return c, cost
    raise ValueError(f"unknown FAT query method {method!r}")


def find_free_fdt_slot(vol: Volume, method: FdtQueryMethod):
    """Next directory slot and the cost of locating it."""
    idx = len(vol.fdt)
    if idx >= vol.fdt_capacity:
        raise VolumeFull("file directory table is full")
    if method is FdtQueryMethod.SCAN_ON_DEMAND:
        r = _scan_sectors(vol, range(0, fdt_sector(idx) + 1), "fdt_cache_sector", vol.fdt_base)
        return idx, r
    cost = NO_COST if vol.dir_cached else cache_directory(vol)
    return idx, cost


# --- mutations -------------------------------------------------------------


def link_cluster(vol: Volume, prev: int | None, nxt: int, owner: int) -> None:
    """Append FREE cluster ``nxt`` after chain tail ``prev`` (or start a chain)."""
    fat = vol.fat
    if not fat.is_free(nxt):
        raise DoubleAllocate(f"cluster {nxt} is not free")
    if prev is not None and fat.get(prev) != EOC:
        raise CorruptChain(f"cluster {prev} is not a chain tail")
    fat.links[nxt] = EOC
    fat.dirty.mark(fat_sector(nxt))
    if prev is not None:
        fat.links[prev] = nxt
        fat.dirty.mark(fat_sector(prev))
    vol.owner[nxt] = owner
    fat.high_water = max(fat.high_water, nxt + 1)
    vol.next_free_hint = (nxt + 1) % fat.n_entries


def take_from_pool(vol: Volume, prev: int | None, owner: int) -> int:
    """Hand the lowest pre-claimed cluster to a file.

    The claim already wrote ``i -> i + 1`` links on flash, so only a link
    that departs from that sequence dirties a sector.  The new tail's EOC
    is left for the close.
    """
    fat = vol.fat
    if fat.pool is None:
        raise VolumeFull("no pre-allocated cluster pool")
    lo, hi = fat.pool
    if prev is not None and fat.get(prev) != EOC and prev not in fat.links:
        raise CorruptChain(f"cluster {prev} is not a chain tail")
    c = lo
    fat.pool = (lo + 1, hi) if lo + 1 < hi else None
    fat.links[c] = EOC
    if prev is not None:
        if fat.links.get(prev) != EOC:
            raise CorruptChain(f"cluster {prev} is not a chain tail")
        fat.links[prev] = c
        cl = fat.claimed
        if not (cl is not None and cl[0] <= prev < cl[1] and c == prev + 1):
            fat.dirty.mark(fat_sector(prev))
    vol.owner[c] = owner
    fat.high_water = max(fat.high_water, c + 1)
    vol.next_free_hint = (c + 1) % fat.n_entries
    return c


def claim_pool(vol: Volume, method: FatQueryMethod) -> Receipt:
    """Pre-allocate every free cluster from the lowest free one to the end.

    Marks the covered FAT sectors dirty and flushes them (one run per
    mirror).  Returns the combined query + flush receipt.
    """
    fat = vol.fat
    lo = fat.pool[0] if fat.pool else fat.high_water
    hi = fat.n_entries
    if lo >= hi:
        raise VolumeFull("nothing to pre-allocate")
    s_lo, s_hi = fat_sector(lo), fat_sector(hi - 1) + 1
    if method is FatQueryMethod.SCAN_ON_DEMAND:
        q = _scan_sectors(vol, range(s_lo, s_hi), "fat_cache_sector", vol.fat_base[0])
    elif method is FatQueryMethod.CACHED_FREELIST:
        q = _read(vol, vol.fat_base[0] + s_lo, s_hi - s_lo, 1)
    else:
        q = NO_COST if vol.prescanned else prescan_fat(vol)
    fat.pool = (lo, hi)
    fat.claimed = (lo, hi)
    vol.freelist.clear()
    fat.dirty.mark_range(s_lo, s_hi)
    r = flush_fat(vol)
    vol.active_counters.prealloc_release_bytes += r.bytes
    return Receipt(q.bytes + r.bytes, q.jumps + r.jumps)


def release_pool(vol: Volume) -> None:
    """Return unused pre-claimed clusters to FREE (dirty only; caller flushes)."""
    fat = vol.fat
    if fat.pool is not None:
        lo, hi = fat.pool
        fat.dirty.mark_range(fat_sector(lo), fat_sector(hi - 1) + 1)
        fat.pool = None
    fat.claimed = None


def mark_tail_eoc(vol: Volume, tail: int) -> None:
    vol.fat.dirty.mark(fat_sector(tail))


def flush_fat(vol: Volume) -> Receipt:
    """Write every dirty FAT sector to both mirrors, run by run."""
    fat = vol.fat
    runs = fat.dirty.runs()
    if not runs:
        return NO_COST
    n = sum(hi - lo for lo, hi in runs)
    c = vol.active_counters
    c.fat_sector_writes += 2 * n
    c.fat_jumps += 2 * len(runs)
    for m in range(fat.mirror_count):
        fat.mirror_sector_writes[m] += n
    fat.dirty.clear()
    vol.last_written_sector = vol.fat_base[1] + runs[-1][1] - 1
    vol.last_op = "meta"
    return Receipt(2 * SECTOR_BYTES * n, 2 * len(runs))


def flush_fdt(vol: Volume) -> Receipt:
    runs = vol.fdt_dirty.runs()
    if not runs:
        return NO_COST
    n = sum(hi - lo for lo, hi in runs)
    c = vol.active_counters
    c.fdt_sector_writes += n
    c.fdt_jumps += len(runs)
    vol.fdt_dirty.clear()
    vol.last_written_sector = vol.fdt_base + runs[-1][1] - 1
    vol.last_op = "meta"
    return Receipt(SECTOR_BYTES * n, len(runs))


def create_fdt_entry(vol: Volume, idx: int | None = None) -> int:
    if idx is None:
        idx = len(vol.fdt)
    if idx != len(vol.fdt):
        raise ValueError("directory slots are assigned in order")
    if idx >= vol.fdt_capacity:
        raise VolumeFull("file directory table is full")
    vol.fdt.append(FdtEntry(name=f"F{idx:07d}.BIN"))
    vol.fdt_dirty.mark(fdt_sector(idx))
    return idx


def touch_fdt_entry(vol: Volume, idx: int) -> None:
    vol.fdt_dirty.mark(fdt_sector(idx))


def write_cluster_data(vol: Volume, cluster: int, nbytes: int, offset: int = 0) -> Receipt:
    """Program ``nbytes`` (rounded up to whole sectors) into a cluster.

    Costs one jump unless the first sector directly follows the last
    sector written on the device.
    """
    if nbytes <= 0:
        raise ValueError("write of zero bytes")
    if offset % SECTOR_BYTES or offset < 0:
        raise ValueError("offset must be sector-aligned")
    if offset + nbytes > vol.cluster_bytes:
        raise ValueError("write exceeds cluster")
    if cluster not in vol.owner or vol.fat.get(cluster) == FREE:
        raise CorruptChain(f"cluster {cluster} is not allocated")
    nsec = -(-nbytes // SECTOR_BYTES)
    start = vol.data_sector(cluster, offset)
    jump = 0 if vol.last_written_sector == start - 1 else 1
    c = vol.active_counters
    c.data_bytes += nsec * SECTOR_BYTES
    c.data_jumps += jump
    if jump and vol.last_op in ("meta", "read"):
        c.induced_jumps += 1
    vol.last_written_sector = start + nsec - 1
    vol.last_op = "data"
    return Receipt(nsec * SECTOR_BYTES, jump)


# --- checks and dumps ------------------------------------------------------


def verify_consistency(vol: Volume) -> list[str]:
    """Return every invariant violation found (empty list means OK)."""
    fat = vol.fat
    out = []
    if len(set(fat.mirror_sector_writes)) != 1:
        out.append(f"FAT mirrors diverged: {fat.mirror_sector_writes}")
    for c, v in fat.links.items():
        if v != EOC and not (0 <= v < fat.n_entries):
            out.append(f"FAT[{c}] holds invalid value {v}")
    # every explicit entry must reach EOC without revisiting a cluster
    done: set[int] = set()
    for start in fat.links:
        if start in done:
            continue
        path, seen = [], set()
        c = start
        while True:
            if c in done:
                break
            if c in seen:
                out.append(f"cycle in cluster chain at {c}")
                break
            seen.add(c)
            path.append(c)
            v = fat.get(c)
            if v == EOC:
                break
            if v == FREE or v < 0:
                out.append(f"chain through {c} runs into a FREE cluster")
                break
            c = v
        done.update(path)
    # occupancy agrees with the FAT
    for c in fat.links:
        if c not in vol.owner:
            out.append(f"cluster {c} linked in FAT but not owned")
    for c in vol.owner:
        if fat.get(c) == FREE:
            out.append(f"cluster {c} owned but FREE in FAT")
    chain_total = 0
    for idx, e in enumerate(vol.fdt):
        if e.first_cluster is None:
            if e.size and not e.is_open:
                out.append(f"file {idx} has size {e.size} but no clusters")
            continue
        n, c, seen = 0, e.first_cluster, set()
        while c not in (EOC, FREE) and c not in seen and c >= 0:
            seen.add(c)
            if vol.owner.get(c) != idx:
                out.append(f"file {idx} chain passes cluster {c} owned by {vol.owner.get(c)}")
                break
            n += 1
            c = fat.get(c)
        chain_total += n
        if not e.is_open:
            want = -(-e.size // vol.cluster_bytes)
            if n != want:
                out.append(f"file {idx}: chain has {n} clusters, size needs {want}")
    if not out and chain_total != len(vol.owner):
        out.append(f"chains cover {chain_total} clusters, {len(vol.owner)} occupied")
    return out


def _rle_fat(fat: FatTable):
    runs = []
    for c in sorted(fat.links):
        v = fat.links[c]
        if runs and runs[-1][0] + runs[-1][1] == c and runs[-1][2] == c:
            # previous run was sequential up to c
            runs[-1][1] += 1
            runs[-1][2] = v
        else:
            runs.append([c, 1, v])
    return [{"start": s, "length": n, "last_value": v} for s, n, v in runs]


def dump_state(vol: Volume) -> dict:
    """JSON-ready debugging snapshot."""
    return {
        "clusters": vol.fat.n_entries,
        "fat_runs": _rle_fat(vol.fat),
        "pool": list(vol.fat.pool) if vol.fat.pool else None,
        "fat_dirty_runs": vol.fat.dirty.runs(),
        "fdt": [e.as_dict() for e in vol.fdt],
        "fdt_dirty_runs": vol.fdt_dirty.runs(),
        "counters": vol.counters.as_dict(),
        "setup_counters": vol.setup_counters.as_dict(),
    }
