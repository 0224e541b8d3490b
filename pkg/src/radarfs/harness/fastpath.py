"""Closed-form counters for a single periodic stream.

A single stream allocates clusters strictly in sequence, so every FAT and
FDT flush covers one contiguous run whose extent follows from cluster
arithmetic.  Per file we build the list of data writes as numpy arrays and
derive reads, flushes and jumps from them without replaying the volume.
The result must match ``run_event_mode`` bit for bit.
"""

from __future__ import annotations

import numpy as np

from ..filesystem import FatQueryMethod, FdtQueryMethod, MetadataCounters
from ..flash_model import FAT_ENTRIES_PER_SECTOR, FDT_ENTRIES_PER_SECTOR, SECTOR_BYTES
from ..strategies import DataWrite, FatUpdate, FdtUpdate, StrategyTuple

FPS = FAT_ENTRIES_PER_SECTOR


class FastPathUnsupported(Exception):
    """The workload is outside what the closed forms cover."""


def _runs(sectors) -> int:
    s = sorted(set(sectors))
    return sum(1 for i, x in enumerate(s) if i == 0 or x != s[i - 1] + 1)


class _Model:
    def __init__(self, cfg, t: StrategyTuple, static_setup: bool):
        timing = cfg.timing
        self.t = t
        self.static = static_setup
        self.charge = cfg.charge_read_jumps
        self.cb = timing.cluster_bytes
        self.n = timing.n_clusters
        self.nfs = -(-self.n // FPS)
        self.fdt_nsec = -(-cfg.fdt_entries // FDT_ENTRIES_PER_SECTOR)
        self.wc = cfg.freelist_sectors * FPS
        self.w = cfg.freelist_sectors
        self.m = MetadataCounters()
        self.s = MetadataCounters()
        self.cur = self.m
        self.meta = True  # head last moved by a metadata op (true after format)
        self.contig = False
        self.frontier = 0
        self.fat_cache = None
        self.fdt_cache = None
        self.fat_closed = 0
        self.fdt_closed = 0
        self.batch_fat = None  # [lo, hi] dirty FAT sectors pending
        self.fdt_pending: set = set()
        self.tails: list = []

    # -- primitive costs

    def read(self, sectors, jumps):
        if not self.charge or jumps == 0:
            return
        self.cur.read_sectors += sectors
        self.cur.read_jumps += jumps
        self.meta = True

    def fat_flush(self, count, runs, prealloc=False):
        if count == 0:
            return
        self.cur.fat_sector_writes += 2 * count
        self.cur.fat_jumps += 2 * runs
        if prealloc:
            self.cur.prealloc_release_bytes += 2 * SECTOR_BYTES * count
        self.meta = True

    def fdt_flush(self, count, runs):
        if count == 0:
            return
        self.cur.fdt_sector_writes += count
        self.cur.fdt_jumps += runs
        self.meta = True

    def flush_fdt_pending(self):
        if self.fdt_pending:
            self.fdt_flush(len(self.fdt_pending), _runs(self.fdt_pending))
            self.fdt_pending.clear()

    # -- phases

    def mount(self):
        t = self.t
        if self.static:
            self.cur = self.s
        if t.fat_query is FatQueryMethod.PRESCAN_ALL:
            self.read(self.nfs, 1)
        if t.fdt_query is FdtQueryMethod.CACHED_DIR:
            self.read(self.fdt_nsec, 1)
        if t.fat_update is FatUpdate.FULL_PREALLOC:
            self.fat_flush(self.nfs, 1, prealloc=True)
        self.cur = self.m

    def open_file(self, j):
        t = self.t
        sj = j // FDT_ENTRIES_PER_SECTOR
        if t.fdt_query is FdtQueryMethod.SCAN_ON_DEMAND:
            reads = sj + 1 - (1 if self.fdt_cache == 0 else 0)
            self.fdt_cache = sj
            self.read(reads, reads)
        self.fdt_pending.add(sj)
        if t.fat_update is FatUpdate.FILE_PREALLOC:
            s_lo = self.frontier // FPS
            count = self.nfs - s_lo
            if t.fat_query is FatQueryMethod.SCAN_ON_DEMAND:
                reads = count - (1 if self.fat_cache == s_lo else 0)
                self.fat_cache = self.nfs - 1
                self.read(reads, reads)
            elif t.fat_query is FatQueryMethod.CACHED_FREELIST:
                self.read(count, 1)
            self.fat_flush(count, 1, prealloc=True)

    def file(self, j, B, G, P, rotated):
        """Account one file of ``B`` bytes starting at stream offset ``G``."""
        t, cb, c = self.t, self.cb, self.m
        self.open_file(j)
        sj = j // FDT_ENTRIES_PER_SECTOR

        # piece ends (file-relative) and which pieces see an after-packet hook
        first_mult = (G // P + 1) * P
        pe = np.arange(first_mult, G + B, P, dtype=np.int64) - G
        pe = np.append(pe, np.int64(B))
        npieces = len(pe)
        ap = np.ones(npieces + 1, dtype=bool)
        ap[npieces] = False
        if rotated:
            ap[npieces - 1] = False

        # data writes
        if t.data_write is DataWrite.PER_SECTOR:
            ends = pe
            starts = np.concatenate(([0], pe[:-1]))
            piece = np.arange(npieces)
        else:
            unit = cb if t.data_write is DataWrite.PER_CLUSTER else cb * t.burst
            nfull = B // unit
            ends = unit * np.arange(1, nfull + 1, dtype=np.int64)
            piece = np.searchsorted(pe, ends, side="left")
            if B % unit:
                ends = np.append(ends, np.int64(B))
                piece = np.append(piece, npieces)
            starts = np.concatenate(([0], ends[:-1]))
        nops = len(ends)
        before = -(-starts // cb)
        after = -(-ends // cb)
        new = after - before
        alloc = new > 0
        gfirst = self.frontier + before
        glast = self.frontier + after - 1

        c.data_bytes += int(B)

        pool_mode = t.fat_update in (FatUpdate.FILE_PREALLOC, FatUpdate.FULL_PREALLOC)
        reads = np.zeros(nops, dtype=np.int64)
        rsec = 0
        if not pool_mode and self.charge:
            if t.fat_query is FatQueryMethod.SCAN_ON_DEMAND:
                reads = np.where(alloc, glast // FPS - (gfirst - 1) // FPS, 0)
                rsec = int(reads.sum())
            elif t.fat_query is FatQueryMethod.CACHED_FREELIST:
                reads = np.where(alloc, glast // self.wc - (gfirst - 1) // self.wc, 0)
                rsec = int(reads.sum()) * self.w
        if not pool_mode and t.fat_query is FatQueryMethod.SCAN_ON_DEMAND and nops:
            last_alloc = self.frontier + int(after[-1]) - 1
            if last_alloc >= 0 and int(after[-1]) > 0:
                self.fat_cache = last_alloc // FPS
        c.read_jumps += int(reads.sum())
        c.read_sectors += rsec

        # flushes issued right after an allocating write
        fat_pc = t.fat_update is FatUpdate.PER_CLUSTER
        fdt_pc = t.fdt_update is FdtUpdate.PER_CLUSTER
        after_flush = alloc & (fat_pc or fdt_pc)
        if fat_pc:
            lo = np.where(before > 0, gfirst - 1, gfirst) // FPS
            secs = (glast // FPS - lo + 1)[alloc]
            c.fat_sector_writes += 2 * int(secs.sum())
            c.fat_jumps += 2 * int(alloc.sum())
        if fdt_pc:
            c.fdt_sector_writes += int(alloc.sum())
            c.fdt_jumps += int(alloc.sum())
            if alloc.any():
                self.fdt_pending.discard(sj)
        if t.fat_update is FatUpdate.BATCH_DEFERRED and alloc.any():
            lo = np.where(before > 0, gfirst - 1, gfirst)[alloc].min() // FPS
            hi = int(glast[alloc].max()) // FPS
            if self.batch_fat is None:
                self.batch_fat = [int(lo), hi]
            else:
                self.batch_fat = [min(self.batch_fat[0], int(lo)), max(self.batch_fat[1], hi)]

        # per-packet directory flushes
        pp = t.fdt_update is FdtUpdate.PER_PACKET
        has_op = np.zeros(npieces + 1, dtype=bool)
        has_op[piece] = True
        if pp:
            flushes = ap[:npieces] & has_op[:npieces]
            flushes[0] = ap[0]
            nfl = int(flushes.sum())
            c.fdt_sector_writes += nfl
            c.fdt_jumps += nfl
            if nfl:
                self.fdt_pending.discard(sj)
                last_fl = int(np.nonzero(flushes)[0][-1])
                done = ends[piece <= last_fl]
                pp_size = int(done[-1]) if len(done) else 0
            else:
                pp_size = -1
            between = np.zeros(nops, dtype=bool)
            between[1:] = (piece[1:] > piece[:-1]) & ap[piece[:-1]]
        else:
            between = np.zeros(nops, dtype=bool)

        # jumps in front of each data write
        ms = reads > 0
        ms[1:] |= after_flush[:-1] | between[1:]
        ms0 = self.meta or bool(ms[0]) or (pp and int(piece[0]) > 0 and bool(ap[0]))
        ms[0] = ms0
        jumps = int(ms.sum()) + (0 if ms0 or self.contig else 1)
        c.data_jumps += jumps
        c.induced_jumps += int(ms.sum())

        # head state after the last write
        k = nops - 1
        self.meta = bool(after_flush[k]) or (pp and int(piece[k]) < npieces and bool(ap[piece[k]]))
        self.contig = B % cb == 0

        nclus = int(after[-1])
        tail = self.frontier + nclus - 1
        self.frontier += nclus

        # close
        if t.fat_update is FatUpdate.FILE_PREALLOC:
            self.fat_flush(self.nfs - tail // FPS, 1, prealloc=True)
        elif t.fat_update is FatUpdate.FULL_PREALLOC:
            self.tails.append(tail // FPS)
        elif t.fat_update is FatUpdate.BATCH_DEFERRED:
            self.fat_closed += 1
            if self.fat_closed % t.fat_batch == 0 and self.batch_fat is not None:
                lo, hi = self.batch_fat
                self.fat_flush(hi - lo + 1, 1)
                self.batch_fat = None
        if t.fdt_update is FdtUpdate.BATCH_DEFERRED:
            self.fdt_pending.add(sj)
            self.fdt_closed += 1
            if self.fdt_closed % t.fdt_batch == 0:
                self.flush_fdt_pending()
        else:
            if fdt_pc:
                last = ends[alloc]
                flushed = int(last[-1]) if len(last) else -1
            elif pp:
                flushed = pp_size
            else:
                flushed = -1
            if flushed != B:
                self.fdt_pending.add(sj)
            self.flush_fdt_pending()

    def finish(self):
        t = self.t
        if t.fat_update is FatUpdate.FULL_PREALLOC:
            if self.static:
                self.cur = self.s
            lo = self.frontier // FPS
            pts = sorted({x for x in self.tails if x < lo})
            runs = _runs(pts)
            if lo < self.nfs:
                runs += 0 if pts and pts[-1] == lo - 1 else 1
            self.fat_flush(len(pts) + self.nfs - lo, runs, prealloc=True)
            self.cur = self.m
        if self.batch_fat is not None:
            lo, hi = self.batch_fat
            self.fat_flush(hi - lo + 1, 1)
            self.batch_fat = None
        self.flush_fdt_pending()


def run_fast_path(cfg, t: StrategyTuple, static_setup: bool):
    from .engine import _check_conservation, _report

    wl = cfg.workload
    if wl.has_random:
        raise FastPathUnsupported("random arrivals")
    if len(wl.streams) != 1:
        raise FastPathUnsupported("closed forms cover a single stream only")
    if wl.cache_bytes_per_stream is not None:
        raise FastPathUnsupported("bounded cache may drop packets")
    spec = wl.streams[0]
    P, F = spec.packet_bytes, spec.file_limit
    if P % SECTOR_BYTES or F % SECTOR_BYTES:
        raise FastPathUnsupported("packet and file sizes must be sector multiples")
    n = spec.packet_count()
    T = n * P
    nfiles = -(-T // F)
    cb = cfg.timing.cluster_bytes
    clusters = (T // F) * (-(-F // cb)) + -(-(T % F) // cb)
    if clusters + cfg.freelist_sectors * FPS > cfg.timing.n_clusters:
        raise FastPathUnsupported("workload comes close to filling the volume")
    if nfiles > cfg.fdt_entries:
        raise FastPathUnsupported("more files than directory slots")

    fm = _Model(cfg, t, static_setup)
    fm.mount()
    for j in range(nfiles):
        G = j * F
        B = min(F, T - G)
        fm.file(j, B, G, P, rotated=B == F)
    fm.finish()

    m, s = fm.m, fm.s
    tb = (m.data_bytes + m.fat_bytes + m.fdt_bytes) + (s.data_bytes + s.fat_bytes + s.fdt_bytes)
    tj = (m.data_jumps + m.fat_jumps + m.fdt_jumps + m.read_jumps
          + s.data_jumps + s.fat_jumps + s.fdt_jumps + s.read_jumps)
    _check_conservation(cfg.timing, m, s, tb, tj)
    return _report(cfg, t, m, s, 0, 0, T, nfiles, "fast", [])
