"""Shared domain types for the coherence model.

Everything downstream (cache model, interconnect model, software costs,
advisor, pipelines) speaks in terms of the types defined here: the four
interface paths, transfer directions, the platform geometry, workload
profiles, and the cost breakdown that every comparison is expressed in.

Unit conventions, used everywhere without exception:
  * times are seconds (float)
  * sizes are bytes (int)
  * cycles convert to seconds through ``bus_freq_hz``
Addresses are abstract 64-bit integers in a flat physical space.
"""

from __future__ import annotations

import configparser
import enum
import re
from dataclasses import dataclass, field, replace

KiB = 1024
MiB = 1024 * 1024


class ConfigError(ValueError):
    """Raised for platform configurations that cannot be used at all."""


class SpecificationError(ValueError):
    """Raised for ill-formed transfer or pipeline specifications."""


class DataFileError(ValueError):
    """Raised for malformed input files; carries file and line context."""

    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line
        self.message = message


class InterfacePath(enum.Enum):
    """The four usable port/allocation combinations.

    HP_NC  direct memory port, non-cacheable buffer (no coherence needed)
    HP_C   direct memory port, cacheable buffer (manual flush/invalidate)
    HPC    coherent bus port, snoops the CPU cache (device->cache only)
    ACP    direct cache port, every beat is a cache access
    """

    HP_NC = "hp_nc"
    HP_C = "hp_c"
    HPC = "hpc"
    ACP = "acp"

    @property
    def label(self) -> str:
        return {
            InterfacePath.HP_NC: "HP (NC)",
            InterfacePath.HP_C: "HP (C)",
            InterfacePath.HPC: "HPC",
            InterfacePath.ACP: "ACP",
        }[self]

    @property
    def uses_cacheable_buffer(self) -> bool:
        return self is not InterfacePath.HP_NC


class Direction(enum.Enum):
    CPU_TO_PL = "cpu_to_pl"  # TX
    PL_TO_CPU = "pl_to_cpu"  # RX
    PL_TO_PL = "pl_to_pl"

    @property
    def label(self) -> str:
        return {
            Direction.CPU_TO_PL: "TX",
            Direction.PL_TO_CPU: "RX",
            Direction.PL_TO_PL: "PL-PL",
        }[self]


class PreState(enum.Enum):
    """How the shared buffer was prepared before a transfer."""

    WRITTEN = "written"   # resident and dirty
    READ = "read"         # resident and clean
    FLUSHED = "flushed"   # not resident
    NONE = "none"         # irrelevant (path never consults the cache)


@dataclass(frozen=True)
class BufferPreState:
    """Pre-transfer buffer state plus the measured cache residency."""

    kind: PreState
    resident_fraction: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.resident_fraction <= 1.0:
            raise SpecificationError(
                f"resident_fraction {self.resident_fraction} outside [0, 1]")


class CpuRole(enum.Enum):
    MOSTLY_WRITE = "mostly_write"
    MIXED_READ_WRITE = "mixed_read_write"
    MOSTLY_READ = "mostly_read"


class WritePattern(enum.Enum):
    SEQUENTIAL = "sequential"
    MAKEABLE_SEQUENTIAL = "makeable_sequential"
    IRREGULAR = "irregular"


class ConsumeLatency(enum.Enum):
    IMMEDIATE = "immediate"
    DELAYED = "delayed"


@dataclass(frozen=True)
class PlatformConfig:
    """Bus and cache geometry of the modeled platform.

    Defaults describe a 128-bit 300 MHz interconnect in front of a shared
    1 MiB 16-way L2 with 64-byte lines.  The cache associativity and line
    size are deliberate configuration knobs, not platform facts; tests
    must not rely on them silently.
    """

    bus_width_bits: int = 128
    bus_freq_hz: int = 300_000_000
    l2_size_bytes: int = 1 * MiB
    l2_ways: int = 16
    l2_line_bytes: int = 64
    dram_latency_cycles: int = 8
    snoop_penalty_cycles: int = 1
    cache_miss_penalty_cycles: int = 11
    wc_chunk_bits: int = 128
    bypass_threshold_lines: int = 4
    rng_seed: int = 0

    @property
    def beat_bytes(self) -> int:
        return self.bus_width_bits // 8

    @property
    def wc_chunk_bytes(self) -> int:
        return self.wc_chunk_bits // 8

    @property
    def l2_num_sets(self) -> int:
        return self.l2_size_bytes // (self.l2_ways * self.l2_line_bytes)

    @property
    def l2_num_lines(self) -> int:
        return self.l2_size_bytes // self.l2_line_bytes

    @property
    def bypass_threshold_bytes(self) -> int:
        return self.bypass_threshold_lines * self.l2_line_bytes


def validate_config(config: PlatformConfig) -> list[str]:
    """Return a list of invariant violations; empty iff the config is usable.

    Violations are data, not exceptions: callers decide whether to abort.
    """
    v: list[str] = []
    for name in ("bus_width_bits", "bus_freq_hz", "l2_size_bytes", "l2_ways",
                 "l2_line_bytes", "wc_chunk_bits"):
        if getattr(config, name) <= 0:
            v.append(f"{name}: must be positive")
    for name in ("dram_latency_cycles", "snoop_penalty_cycles",
                 "cache_miss_penalty_cycles"):
        if getattr(config, name) < 0:
            v.append(f"{name}: must be non-negative")
    if config.bus_width_bits % 8:
        v.append("bus_width_bits: must be a multiple of 8")
    if config.wc_chunk_bits % 8:
        v.append("wc_chunk_bits: must be a multiple of 8")
    if config.l2_ways > 0 and config.l2_line_bytes > 0:
        if config.l2_size_bytes % (config.l2_ways * config.l2_line_bytes):
            v.append("l2_size_bytes: must be a multiple of l2_ways * l2_line_bytes")
    if config.bypass_threshold_lines < 1:
        v.append("bypass_threshold_lines: must be at least 1")
    return v


def peak_bandwidth(config: PlatformConfig) -> float:
    """Theoretical interface bandwidth in bytes/s: width/8 * frequency."""
    if config.bus_width_bits <= 0 or config.bus_freq_hz <= 0:
        raise ConfigError("peak_bandwidth requires positive bus width and frequency")
    return (config.bus_width_bits / 8) * config.bus_freq_hz


@dataclass(frozen=True)
class TransferSpec:
    """One data movement between CPU-visible memory and the device."""

    size_bytes: int
    direction: Direction
    path: InterfacePath
    pre_state: BufferPreState = BufferPreState(PreState.NONE)
    base_addr: int = 0

    def __post_init__(self):
        if self.size_bytes < 1:
            raise SpecificationError("transfer size_bytes must be >= 1")
        if self.base_addr < 0:
            raise SpecificationError("transfer base_addr must be non-negative")

    def aligned(self, line_bytes: int) -> "TransferSpec":
        """Normalize base_addr down to a cache-line boundary."""
        base = (self.base_addr // line_bytes) * line_bytes
        if base == self.base_addr:
            return self
        return replace(self, base_addr=base)


@dataclass(frozen=True)
class WorkloadProfile:
    """Application-level description of one data flow.

    Every field is total: the advisor must produce a recommendation for any
    combination, with no optional escape hatches.
    """

    buffer_bytes: int
    direction: Direction
    cpu_role: CpuRole
    write_pattern: WritePattern
    consume_latency: ConsumeLatency
    intervening_traffic_bytes: int = 0
    background_memory_intensive: bool = False

    def __post_init__(self):
        if self.buffer_bytes < 1:
            raise SpecificationError("profile buffer_bytes must be >= 1")
        if self.intervening_traffic_bytes < 0:
            raise SpecificationError("intervening_traffic_bytes must be >= 0")


@dataclass(frozen=True)
class CostBreakdown:
    """The unit of every comparison: four additive time components."""

    hw_transfer_s: float = 0.0
    maintenance_s: float = 0.0
    barrier_s: float = 0.0
    cpu_access_penalty_s: float = 0.0

    def __post_init__(self):
        for name in ("hw_transfer_s", "maintenance_s", "barrier_s",
                     "cpu_access_penalty_s"):
            if getattr(self, name) < 0:
                raise SpecificationError(f"cost component {name} must be >= 0")

    @property
    def total_s(self) -> float:
        return (self.hw_transfer_s + self.maintenance_s + self.barrier_s
                + self.cpu_access_penalty_s)

    def __add__(self, other: "CostBreakdown") -> "CostBreakdown":
        return CostBreakdown(
            self.hw_transfer_s + other.hw_transfer_s,
            self.maintenance_s + other.maintenance_s,
            self.barrier_s + other.barrier_s,
            self.cpu_access_penalty_s + other.cpu_access_penalty_s,
        )


# --- quantity parsing (config files, CLI size arguments) -------------------

_QUANTITY_RE = re.compile(
    r"^\s*([0-9]+(?:\.[0-9]+)?(?:[eE][-+]?[0-9]+)?)\s*([A-Za-z]*)\s*$")

_SIZE_SUFFIXES = {
    "": 1,
    "b": 1,
    "k": KiB, "kib": KiB, "kb": KiB,
    "m": MiB, "mib": MiB, "mb": MiB,
    "g": 1024 * MiB, "gib": 1024 * MiB, "gb": 1024 * MiB,
}

_FREQ_SUFFIXES = {
    "hz": 1,
    "khz": 10 ** 3,
    "mhz": 10 ** 6,
    "ghz": 10 ** 9,
}

_TIME_SUFFIXES = {
    "s": 1.0,
    "ms": 1e-3,
    "us": 1e-6,
    "ns": 1e-9,
}


def parse_quantity(text: str) -> float:
    """Parse a number with an optional size/frequency/time suffix.

    Sizes use power-of-two suffixes ("4K", "64KiB", "1MiB"); frequencies use
    decimal suffixes ("300MHz"); durations use "s/ms/us/ns".
    """
    m = _QUANTITY_RE.match(text)
    if not m:
        raise ValueError(f"cannot parse quantity {text!r}")
    value = float(m.group(1))
    suffix = m.group(2).lower()
    if suffix in _SIZE_SUFFIXES:
        return value * _SIZE_SUFFIXES[suffix]
    if suffix in _FREQ_SUFFIXES:
        return value * _FREQ_SUFFIXES[suffix]
    if suffix in _TIME_SUFFIXES:
        return value * _TIME_SUFFIXES[suffix]
    raise ValueError(f"unknown suffix {m.group(2)!r} in {text!r}")


def parse_size(text: str) -> int:
    value = parse_quantity(text)
    if value != int(value):
        raise ValueError(f"size {text!r} is not a whole number of bytes")
    return int(value)


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"cannot parse boolean {text!r}")


_INT_FIELDS = {
    "bus_width_bits", "bus_freq_hz", "l2_size_bytes", "l2_ways",
    "l2_line_bytes", "dram_latency_cycles", "snoop_penalty_cycles",
    "cache_miss_penalty_cycles", "wc_chunk_bits", "bypass_threshold_lines",
    "rng_seed",
}


def load_config_file(path: str) -> PlatformConfig:
    """Load a PlatformConfig from an INI-style file.

    Recognized sections: ``[platform]`` (fields of PlatformConfig, one key
    per field; values may use suffixed sizes/frequencies), plus optional
    ``[sw-cost]`` and ``[calibration]`` sections consumed by
    :func:`cohsim.swcost.load_sw_params` and
    :func:`cohsim.interconnect.load_calibration_params`.
    Absent keys keep their defaults.
    """
    parser = _read_ini(path)
    overrides = {}
    if parser.has_section("platform"):
        for key, raw in parser.items("platform"):
            if key not in _INT_FIELDS:
                raise DataFileError(path, 0, f"unknown platform key {key!r}")
            try:
                overrides[key] = int(parse_quantity(raw))
            except ValueError as exc:
                raise DataFileError(path, 0, f"bad value for {key}: {exc}") from exc
    config = PlatformConfig(**overrides)
    violations = validate_config(config)
    if violations:
        raise ConfigError(f"{path}: invalid platform config: " + "; ".join(violations))
    return config


def _read_ini(path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise DataFileError(path, 0, f"cannot read file: {exc}") from exc
    except configparser.Error as exc:
        line = getattr(exc, "lineno", 0) or 0
        raise DataFileError(path, line, f"malformed config: {exc.message}") from exc
    return parser
