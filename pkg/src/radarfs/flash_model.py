"""Timing model of the NAND flash medium.

Every cost in the simulator reduces to two quantities: bytes moved and
address jumps.  ``elapsed`` turns them into integer nanoseconds.  The
per-byte write time is kept as a ``Fraction`` so that 160 MB/s (6.25 ns/B)
stays exact.

Unit conventions:
  * rates use decimal megabytes (1 MB/s = 10**6 B/s), matching "160MB/s";
  * packet and file sizes use binary kilobytes (1 kB = 1024 B).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ConfigError

SECTOR_BYTES = 512
FAT_ENTRY_BYTES = 4
FDT_ENTRY_BYTES = 32
FAT_ENTRIES_PER_SECTOR = SECTOR_BYTES // FAT_ENTRY_BYTES  # 128
FDT_ENTRIES_PER_SECTOR = SECTOR_BYTES // FDT_ENTRY_BYTES  # 16

KB = 1 << 10
MB = 10**6
KIB = 1 << 10
MIB = 1 << 20
GIB = 1 << 30

# Largest duration we are willing to represent (signed 64-bit nanoseconds).
_MAX_NS = (1 << 63) - 1

# Jump response must be at least this many sector writes.
MIN_JUMP_RATIO = 10


def mb_per_s(x) -> Fraction:
    """Decimal MB/s -> bytes per second."""
    return Fraction(x) * MB


def kb(x) -> int:
    """Binary kB -> bytes."""
    return int(Fraction(x) * KB)


def t_w_from_rate(bytes_per_second) -> Fraction:
    """Per-byte write time in ns for a sustained write rate."""
    rate = Fraction(bytes_per_second)
    if rate <= 0:
        raise ConfigError("write rate must be positive")
    return Fraction(10**9) / rate


@dataclass(frozen=True)
class FlashTimingParams:
    """Physical timing of the medium.  Immutable once built."""

    t_w: Fraction = Fraction(25, 4)  # ns per byte
    t_jump: int = 1_308_160  # ns per address jump
    sectors_per_cluster: int = 16
    volume_capacity: int = 512 * GIB  # data-region bytes
    sector_bytes: int = field(default=SECTOR_BYTES)

    def __post_init__(self):
        object.__setattr__(self, "t_w", Fraction(self.t_w))
        object.__setattr__(self, "t_jump", int(self.t_jump))
        if self.sector_bytes != SECTOR_BYTES:
            raise ConfigError("sector size is fixed at 512 B")
        if self.t_w <= 0:
            raise ConfigError("t_w must be positive")
        if self.t_jump <= 0:
            raise ConfigError("t_jump must be positive")
        if self.sectors_per_cluster < 1:
            raise ConfigError("sectors_per_cluster must be >= 1")
        if self.jump_ratio < MIN_JUMP_RATIO:
            raise ConfigError(
                f"t_jump is only {float(self.jump_ratio):.2f}x a sector write; "
                f"need >= {MIN_JUMP_RATIO}x"
            )
        if self.volume_capacity <= 0 or self.volume_capacity % self.cluster_bytes:
            raise ConfigError(
                f"volume capacity {self.volume_capacity} is not a whole number "
                f"of {self.cluster_bytes} B clusters"
            )

    @property
    def cluster_bytes(self) -> int:
        return SECTOR_BYTES * self.sectors_per_cluster

    @property
    def n_clusters(self) -> int:
        return self.volume_capacity // self.cluster_bytes

    @property
    def jump_ratio(self) -> Fraction:
        """t_jump expressed in sector-write times."""
        return Fraction(self.t_jump) / (SECTOR_BYTES * self.t_w)

    @property
    def write_rate(self) -> Fraction:
        """Sustained write rate in bytes per second."""
        return Fraction(10**9) / self.t_w

    def replace(self, **changes) -> "FlashTimingParams":
        from dataclasses import replace

        return replace(self, **changes)


DEFAULT_TIMING = FlashTimingParams()


def elapsed(params: FlashTimingParams, nbytes: int, jumps: int):
    """Duration in ns of moving ``nbytes`` with ``jumps`` address jumps.

    Returns an ``int`` whenever ``nbytes * t_w`` is a whole number of
    nanoseconds (always true for sector-granular writes), otherwise the
    exact ``Fraction``.
    """
    if nbytes < 0 or jumps < 0:
        raise ValueError("bytes and jumps must be non-negative")
    t = nbytes * params.t_w + jumps * params.t_jump
    if t > _MAX_NS:
        raise ConfigError(f"duration overflow ({nbytes} B, {jumps} jumps)")
    return int(t) if t.denominator == 1 else t


def cluster_data_write_time(params: FlashTimingParams):
    """One cluster of data plus the jump to reach it."""
    return elapsed(params, SECTOR_BYTES * params.sectors_per_cluster, 1)


def fat_update_time(params: FlashTimingParams):
    """One sector rewritten in each of the two mirrored FATs."""
    return elapsed(params, 2 * SECTOR_BYTES, 2)


def fdt_update_time(params: FlashTimingParams):
    return elapsed(params, SECTOR_BYTES, 1)


def mu_per_cluster_original(params: FlashTimingParams) -> Fraction:
    """Management-to-data ratio of the unoptimized FAT layout.

    Four jumps of management (two FAT mirrors, the FDT, and the re-jump
    back to the data region) against one cluster of payload.
    """
    return Fraction(4 * params.t_jump) / (
        SECTOR_BYTES * params.sectors_per_cluster * params.t_w
    )


def max_storage_speed(params: FlashTimingParams, mu) -> Fraction:
    """Effective storage rate in decimal MB/s given a management ratio."""
    return params.write_rate / MB / (1 + Fraction(mu))
