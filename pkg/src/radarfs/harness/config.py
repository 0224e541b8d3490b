"""Flat ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored.  Recognised keys::

    # timing
    t_w = 25/4                  # ns per byte (fraction or decimal)
    t_jump = 1308160            # ns
    sectors_per_cluster = 16
    volume_capacity = 512GiB

    # run
    strategy = fpfqa            # preset, canonical tuple text, or model:<path>
    seed = 7
    fast_path = true
    charge_read_jumps = true
    static_setup = auto         # auto | true | false
    fdt_entries = 65536
    freelist_sectors = 16
    cache_bytes_per_stream = none

    # streams, numbered from 0
    stream.0.type = RADAR_ECHO
    stream.0.rate = 16MB        # per second
    stream.0.packet = 64kB
    stream.0.total = 2GiB       # or stream.0.duration = 10 (seconds)
    stream.0.arrival = periodic # periodic | random
    stream.0.file = 2GiB        # optional file rotation size

Sizes take B, kB/KiB (1024), MB (10**6), MiB, GB (10**9) or GiB suffixes.
"""

from __future__ import annotations

import re
from fractions import Fraction
from pathlib import Path

from ..errors import ConfigError
from ..flash_model import DEFAULT_TIMING, FlashTimingParams
from ..workload import Arrival, DataType, StreamSpec, WorkloadSpec

_UNITS = {
    "": 1, "b": 1,
    "kb": 1024, "kib": 1024,
    "mb": 10**6, "mib": 1 << 20,
    "gb": 10**9, "gib": 1 << 30,
}
_SIZE = re.compile(r"^\s*([0-9]+(?:\.[0-9]+)?(?:/[0-9]+)?)\s*([A-Za-z]*)\s*$")


def parse_config_text(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {raw.strip()!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"line {n}: empty key")
        if k in out:
            raise ConfigError(f"line {n}: duplicate key {k!r}")
        out[k] = v
    return out


def read_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    return parse_config_text(p.read_text(encoding="utf-8"))


def write_config(d: dict, path, header: str | None = None) -> None:
    lines = []
    if header:
        lines += [f"# {h}" for h in header.splitlines()]
    lines += [f"{k} = {v}" for k, v in d.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_size(s: str) -> int:
    m = _SIZE.match(str(s))
    if not m or m.group(2).lower() not in _UNITS:
        raise ConfigError(f"cannot parse size {s!r}")
    v = Fraction(m.group(1)) * _UNITS[m.group(2).lower()]
    if v.denominator != 1:
        raise ConfigError(f"size {s!r} is not a whole number of bytes")
    return int(v)


def parse_bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _int(d, key, default=None):
    if key not in d:
        return default
    try:
        return int(d[key])
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {d[key]!r}") from None


def timing_from(d: dict, base: FlashTimingParams = DEFAULT_TIMING) -> FlashTimingParams:
    kw = {}
    try:
        if "t_w" in d:
            kw["t_w"] = Fraction(d["t_w"])
        if "t_jump" in d:
            kw["t_jump"] = int(Fraction(d["t_jump"]))
    except (ValueError, ZeroDivisionError):
        raise ConfigError("t_w / t_jump must be numbers") from None
    if "sectors_per_cluster" in d:
        kw["sectors_per_cluster"] = _int(d, "sectors_per_cluster")
    if "volume_capacity" in d:
        kw["volume_capacity"] = parse_size(d["volume_capacity"])
    return base.replace(**kw) if kw else base


def timing_to(t: FlashTimingParams) -> dict:
    return {
        "t_w": str(t.t_w),
        "t_jump": str(t.t_jump),
        "sectors_per_cluster": str(t.sectors_per_cluster),
        "volume_capacity": str(t.volume_capacity),
    }


def workload_from(d: dict, seed=None) -> WorkloadSpec:
    idx = sorted({int(m.group(1)) for k in d if (m := re.match(r"stream\.(\d+)\.", k))})
    if not idx:
        raise ConfigError("no stream.N.* keys in configuration")
    streams = []
    for i in idx:
        p = f"stream.{i}."
        try:
            dtype = DataType[d.get(p + "type", "RADAR_ECHO").upper()]
        except KeyError:
            raise ConfigError(f"unknown data type {d[p + 'type']!r}") from None
        if p + "rate" not in d or p + "packet" not in d:
            raise ConfigError(f"stream {i} needs rate and packet")
        try:
            arrival = Arrival(d.get(p + "arrival", "periodic").lower())
        except ValueError:
            raise ConfigError(f"stream {i}: arrival must be periodic or random") from None
        streams.append(StreamSpec(
            data_type=dtype,
            rate=parse_size(d[p + "rate"]),
            packet_bytes=parse_size(d[p + "packet"]),
            total_bytes=parse_size(d[p + "total"]) if p + "total" in d else None,
            duration_s=Fraction(d[p + "duration"]) if p + "duration" in d else None,
            arrival=arrival,
            file_bytes=parse_size(d[p + "file"]) if p + "file" in d else None,
        ))
    cache = d.get("cache_bytes_per_stream", "none")
    cache = None if cache.lower() in ("none", "") else parse_size(cache)
    if seed is None:
        seed = _int(d, "seed")
    return WorkloadSpec(tuple(streams), cache_bytes_per_stream=cache, seed=seed)


def workload_to(wl: WorkloadSpec) -> dict:
    out = {}
    if wl.cache_bytes_per_stream is not None:
        out["cache_bytes_per_stream"] = str(wl.cache_bytes_per_stream)
    for i, s in enumerate(wl.streams):
        p = f"stream.{i}."
        out[p + "type"] = s.data_type.name
        out[p + "rate"] = str(s.rate)
        out[p + "packet"] = str(s.packet_bytes)
        if s.total_bytes is not None:
            out[p + "total"] = str(s.total_bytes)
        if s.duration_s is not None:
            out[p + "duration"] = str(s.duration_s)
        out[p + "arrival"] = s.arrival.value
        if s.file_bytes is not None:
            out[p + "file"] = str(s.file_bytes)
    return out


def run_config_from(d: dict, seed=None):
    from .engine import RunConfig

    if seed is None:
        seed = _int(d, "seed")
    static = d.get("static_setup", "auto").lower()
    static_setup = None if static == "auto" else parse_bool(static)
    return RunConfig(
        workload=workload_from(d, seed),
        strategy=d.get("strategy", "original"),
        timing=timing_from(d),
        seed=seed,
        fast_path=parse_bool(d.get("fast_path", "true")),
        charge_read_jumps=parse_bool(d.get("charge_read_jumps", "true")),
        static_setup=static_setup,
        fdt_entries=_int(d, "fdt_entries", 65536),
        freelist_sectors=_int(d, "freelist_sectors", 16),
    )
