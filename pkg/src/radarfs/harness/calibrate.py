"""Solve timing parameters from target mu values."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

from ..errors import ConfigError
from ..flash_model import (
    DEFAULT_TIMING,
    FAT_ENTRIES_PER_SECTOR,
    GIB,
    MB,
    MIN_JUMP_RATIO,
    SECTOR_BYTES,
    FlashTimingParams,
)
from ..workload import DataType, StreamSpec, WorkloadSpec

log = logging.getLogger(__name__)

# "dozens to hundreds" of sector writes per jump
MAX_JUMP_RATIO = 1000
CALIBRATION_BYTES = 2 * GIB
CALIBRATION_PACKET = 64 * 1024


def echo_workload(rate=16 * MB, nbytes=CALIBRATION_BYTES, packet=CALIBRATION_PACKET) -> WorkloadSpec:
    """One periodic radar-echo stream written to a single file."""
    return WorkloadSpec((StreamSpec(DataType.RADAR_ECHO, rate, packet, total_bytes=nbytes,
                                    file_bytes=nbytes),))


def solve_t_jump(mu_original, sectors_per_cluster=16, t_w=Fraction(25, 4)) -> int:
    """Invert mu = 4 t_jump / (512 C t_w) for t_jump (whole ns)."""
    mu = Fraction(mu_original)
    if mu <= 0:
        raise ConfigError("original-FAT mu target must be positive (t_jump > 0)")
    t = mu * SECTOR_BYTES * sectors_per_cluster * Fraction(t_w) / 4
    return round(t)


@dataclass
class CalibrationResult:
    timing: FlashTimingParams
    mu_original: float
    mu_acpa: float | None = None
    warnings: list = field(default_factory=list)


def _acpa_mu(timing, wl) -> Fraction:
    from .engine import RunConfig, run_simulation

    rep = run_simulation(RunConfig(wl, "acpa", timing=timing))
    return Fraction(rep.mu_exact)


def solve_capacity(timing: FlashTimingParams, mu_target, wl: WorkloadSpec | None = None):
    """Smallest volume capacity whose ACPA mu reaches ``mu_target``.

    ACPA claims and releases every free cluster around each file, so its
    mu grows with capacity; bisection runs over whole FAT sectors.
    Returns (timing, achieved mu).
    """
    wl = wl or echo_workload()
    target = Fraction(mu_target)
    if target <= 0:
        raise ConfigError("ACPA mu target must be positive")
    cb = timing.cluster_bytes
    per_sector = FAT_ENTRIES_PER_SECTOR * cb
    need = sum(s.packet_count() * s.packet_bytes for s in wl.streams)
    # room for the data plus the fast path's free-list margin
    lo = -(-need // per_sector) + 32
    hi = max(lo + 1, timing.volume_capacity // per_sector)

    def mu_at(k):
        return _acpa_mu(timing.replace(volume_capacity=k * per_sector), wl)

    if mu_at(lo) > target:
        raise ConfigError(
            f"ACPA target {float(target)} is infeasible: even a volume just large enough "
            f"for the data gives mu {float(mu_at(lo)):.4f}"
        )
    while mu_at(hi) < target:
        hi *= 2
        if hi > (1 << 40):
            raise ConfigError("ACPA target needs an implausibly large volume")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mu_at(mid) < target:
            lo = mid
        else:
            hi = mid
    # pick whichever neighbour lands closer to the target
    k = min((lo, hi), key=lambda k: abs(mu_at(k) - target))
    t = timing.replace(volume_capacity=k * per_sector)
    return t, mu_at(k)


def calibrate(mu_original=Fraction(1022, 10), mu_acpa=Fraction(32, 100),
              base: FlashTimingParams = DEFAULT_TIMING) -> CalibrationResult:
    notes = []
    t_jump = solve_t_jump(mu_original, base.sectors_per_cluster, base.t_w)
    ratio = Fraction(t_jump) / (SECTOR_BYTES * base.t_w)
    if ratio < MIN_JUMP_RATIO:
        raise ConfigError(
            f"t_jump {t_jump} ns is only {float(ratio):.1f}x a sector write; the medium "
            f"model needs at least {MIN_JUMP_RATIO}x"
        )
    if ratio > MAX_JUMP_RATIO:
        msg = f"jump is {float(ratio):.0f}x a sector write, beyond the hundreds-of-times range"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
    timing = base.replace(t_jump=t_jump)
    mu0 = Fraction(4 * t_jump) / (SECTOR_BYTES * base.sectors_per_cluster * base.t_w)
    res = CalibrationResult(timing, float(mu0), warnings=notes)
    if mu_acpa is not None:
        timing, mu = solve_capacity(timing, mu_acpa)
        res.timing = timing
        res.mu_acpa = float(mu)
        log.info("volume capacity %d B gives ACPA mu %.4f", timing.volume_capacity, float(mu))
    return res
