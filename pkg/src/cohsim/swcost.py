"""CPU-side costs of keeping I/O buffers coherent.

Three cost families, all linear in bytes for a fixed access shape:

  * non-cacheable access penalties: reads from a non-cacheable region run
    at a large multiple of the cacheable read time; sequential writes are
    nearly free thanks to write combining, irregular writes are not;
  * manual maintenance: per-byte flush/invalidate work plus one global
    memory barrier per buffer, doubled when the barrier contends with
    memory-intensive work;
  * composed per-stage costs for pipeline CPU stages.

Maintenance cost is independent of transfer direction by construction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .platform import DataFileError, WritePattern, _read_ini


class RegionKind(enum.Enum):
    CACHEABLE = "cacheable"
    NON_CACHEABLE = "non_cacheable"


@dataclass(frozen=True)
class SwCostParams:
    """Fitted CPU-side cost coefficients.

    Rates are bytes/s; penalties are dimensionless multipliers (>= 1)
    applied to the matching cacheable baseline.  The irregular-write
    penalty has two regimes keyed on working set vs. L2 capacity: write
    combining cannot rescue scattered writes, but past the cache capacity
    the cacheable path loses most of its advantage too.
    """

    cacheable_read_Bps: float = 3.2e9
    cacheable_write_Bps: float = 2.4e9
    nc_read_penalty: float = 30.0
    nc_irregular_write_penalty_small: float = 4.0
    nc_irregular_write_penalty_large: float = 1.33
    maintenance_per_byte_s: float = 2.0e-11
    barrier_s: float = 12e-6
    barrier_contended_multiplier: float = 2.0

    def __post_init__(self):
        if self.cacheable_read_Bps <= 0 or self.cacheable_write_Bps <= 0:
            raise ValueError("cacheable rates must be positive")
        for name in ("nc_read_penalty", "nc_irregular_write_penalty_small",
                     "nc_irregular_write_penalty_large",
                     "barrier_contended_multiplier"):
            if getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be >= 1")
        if self.maintenance_per_byte_s < 0 or self.barrier_s < 0:
            raise ValueError("maintenance coefficients must be >= 0")


def memcpy_cost(src: RegionKind, dst: RegionKind, size_bytes: int,
                params: SwCostParams) -> float:
    """Time for a bulk sequential copy of ``size_bytes``.

    The read side pays the non-cacheable penalty when the source region is
    non-cacheable.  The write side pays nothing extra: sequential
    non-cacheable writes coalesce in the write-combine buffer and run at
    nearly the cacheable rate.
    """
    if size_bytes <= 0:
        raise ValueError("memcpy size must be positive")
    read_rate = params.cacheable_read_Bps
    if src is RegionKind.NON_CACHEABLE:
        read_rate /= params.nc_read_penalty
    return size_bytes / read_rate + size_bytes / params.cacheable_write_Bps


def irregular_write_cost(dst: RegionKind, working_set_bytes: int,
                         l2_size_bytes: int, params: SwCostParams) -> float:
    """Time to write ``working_set_bytes`` in a scattered (transpose-like) order.

    Write combining is inactive for irregular patterns, so a non-cacheable
    destination pays the small-working-set penalty while the data still
    fits in L2 and the large-working-set penalty beyond it.
    """
    if working_set_bytes <= 0:
        raise ValueError("working set must be positive")
    base = working_set_bytes / params.cacheable_write_Bps
    if dst is RegionKind.CACHEABLE:
        return base
    if working_set_bytes <= l2_size_bytes:
        return base * params.nc_irregular_write_penalty_small
    return base * params.nc_irregular_write_penalty_large


@dataclass(frozen=True)
class MaintenanceCost:
    flush_s: float
    barrier_s: float

    @property
    def total_s(self) -> float:
        return self.flush_s + self.barrier_s


def maintenance_cost(buffer_sizes: list[int], contended: bool,
                     params: SwCostParams) -> MaintenanceCost:
    """Manual flush/invalidate time plus one global barrier per buffer.

    Direction-independent: cleaning before a device read costs the same as
    invalidating before a CPU read.  Contended barriers (issued while other
    work hammers memory) cost the configured multiple.
    """
    flush = sum(buffer_sizes) * params.maintenance_per_byte_s
    multiplier = params.barrier_contended_multiplier if contended else 1.0
    barrier = len(buffer_sizes) * params.barrier_s * multiplier
    return MaintenanceCost(flush, barrier)


@dataclass(frozen=True)
class CpuStage:
    """Memory traffic of one CPU pipeline stage."""

    bytes_read: int
    bytes_written: int
    pattern: WritePattern
    src_kind: RegionKind
    dst_kind: RegionKind


def sequential_write_cost(dst: RegionKind, size_bytes: int,
                          params: SwCostParams) -> float:
    """Sequential writes run at the cacheable rate on either region kind.

    A pattern flagged as adjustable-to-sequential is costed the same way:
    the adjustment is assumed applied wherever it matters.
    """
    if size_bytes == 0:
        return 0.0
    return size_bytes / params.cacheable_write_Bps


def cpu_stage_cost(stage: CpuStage, l2_size_bytes: int,
                   params: SwCostParams) -> float:
    """Total CPU time of a stage: read cost plus pattern-aware write cost."""
    if stage.bytes_read < 0 or stage.bytes_written < 0:
        raise ValueError("byte counts must be >= 0")
    total = 0.0
    if stage.bytes_read:
        read_rate = params.cacheable_read_Bps
        if stage.src_kind is RegionKind.NON_CACHEABLE:
            read_rate /= params.nc_read_penalty
        total += stage.bytes_read / read_rate
    if stage.bytes_written:
        if stage.pattern is WritePattern.IRREGULAR:
            total += irregular_write_cost(stage.dst_kind, stage.bytes_written,
                                          l2_size_bytes, params)
        else:
            total += sequential_write_cost(stage.dst_kind, stage.bytes_written,
                                           params)
    return total


_FLOAT_FIELDS = (
    "cacheable_read_Bps", "cacheable_write_Bps", "nc_read_penalty",
    "nc_irregular_write_penalty_small", "nc_irregular_write_penalty_large",
    "maintenance_per_byte_s", "barrier_s", "barrier_contended_multiplier",
)


def load_sw_params(path: str) -> SwCostParams:
    """Read the optional ``[sw-cost]`` section of a platform config file."""
    parser = _read_ini(path)
    # configparser lowercases keys; map back to the dataclass field names
    fields = {name.lower(): name for name in _FLOAT_FIELDS}
    overrides = {}
    if parser.has_section("sw-cost"):
        for key, raw in parser.items("sw-cost"):
            if key not in fields:
                raise DataFileError(path, 0, f"unknown sw-cost key {key!r}")
            try:
                overrides[fields[key]] = float(raw)
            except ValueError as exc:
                raise DataFileError(path, 0, f"bad value for {key}: {exc}") from exc
    return SwCostParams(**overrides)
