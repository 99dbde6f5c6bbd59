"""Strategy selection: the decision tree and the cost-model ranking.

Two deliberately separate modes:

  * :func:`recommend` walks a fixed risk-averse decision tree over a
    workload profile and returns a path with a machine-readable rationale
    trace.  It never consults the cost model.
  * :func:`rank_all` prices every legal path for the profile by composing
    the interconnect model with the software-cost model and sorts by total
    cost.  The two can disagree; the tree trades peak gains for fewer
    worst cases.

Total cost of a flow is ``bytes_to_transfer / raw_bandwidth + software_cost``.

Size thresholds are strict: a buffer routes "large" only above 16 MiB and
"small" only below 64 KiB.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .cache import CacheState
from .interconnect import CalibrationParams, prepare_pre_state, simulate_transfer
from .platform import (ConsumeLatency, CostBreakdown, CpuRole, DataFileError,
                       Direction, InterfacePath, KiB, MiB, PlatformConfig,
                       PreState, TransferSpec, WorkloadProfile, WritePattern,
                       parse_bool, parse_size)
from .swcost import (RegionKind, SwCostParams, irregular_write_cost,
                     maintenance_cost)

LARGE_BUFFER_BYTES = 16 * MiB   # above this, snooped transfers are mostly uncached
SMALL_BUFFER_BYTES = 64 * KiB   # below this, a direct cache-port transfer stays resident


@dataclass(frozen=True)
class DecisionRecord:
    node_id: str
    question: str
    answer: str


@dataclass(frozen=True)
class Recommendation:
    path: InterfacePath
    rationale: tuple[DecisionRecord, ...]
    estimated_cost: Optional[CostBreakdown] = None

    def trace_text(self) -> str:
        """Rationale as one ``node_id | question | answer`` line per node."""
        return "\n".join(f"{r.node_id} | {r.question} | {r.answer}"
                         for r in self.rationale)


def total_cost(alpha_bytes: float, raw_bandwidth_Bps: float,
               software_cost_s: float) -> float:
    """Transfer demand over raw bandwidth, plus CPU-side software cost."""
    if raw_bandwidth_Bps <= 0:
        raise ValueError("raw bandwidth must be positive")
    if alpha_bytes < 0 or software_cost_s < 0:
        raise ValueError("demand and software cost must be >= 0")
    return alpha_bytes / raw_bandwidth_Bps + software_cost_s


def recommend(profile: WorkloadProfile) -> Recommendation:
    """Walk the decision tree; total over every well-formed profile.

    The tree resolves in this order: flows with no CPU on either end use
    the plain direct port; device-to-CPU flows use the snooping port
    (high bandwidth, zero software cost); CPU-to-device flows go to the
    non-cacheable direct port when the CPU only writes sequentially (or
    can be made to), otherwise pick by residency heuristics: very large
    buffers and buffers evicted by intervening traffic snoop cheaply,
    small immediately-consumed buffers ride the direct cache port, and a
    memory-intensive background disqualifies manual maintenance.
    """
    trail: list[DecisionRecord] = []

    def node(node_id: str, question: str, answer: str) -> None:
        trail.append(DecisionRecord(node_id, question, answer))

    def done(path: InterfacePath) -> Recommendation:
        return Recommendation(path, tuple(trail))

    node("direction", "Which units exchange the data?", profile.direction.value)
    if profile.direction is Direction.PL_TO_PL:
        return done(InterfacePath.HP_NC)
    if profile.direction is Direction.PL_TO_CPU:
        return done(InterfacePath.HPC)

    write_dominated = profile.cpu_role is CpuRole.MOSTLY_WRITE
    node("write_dominated", "Does the CPU mostly write this buffer?",
         "yes" if write_dominated else "no")
    if write_dominated:
        sequential = profile.write_pattern in (WritePattern.SEQUENTIAL,
                                               WritePattern.MAKEABLE_SEQUENTIAL)
        node("sequential_writes",
             "Are the writes sequential, or adjustable to be?",
             "yes" if sequential else "no")
        if sequential:
            return done(InterfacePath.HP_NC)

    large = profile.buffer_bytes > LARGE_BUFFER_BYTES
    node("large_buffer", "Is the buffer larger than 16 MiB?",
         "yes" if large else "no")
    if large:
        return done(InterfacePath.HPC)

    small_immediate = (profile.buffer_bytes < SMALL_BUFFER_BYTES
                       and profile.consume_latency is ConsumeLatency.IMMEDIATE)
    node("small_and_immediate",
         "Is the buffer smaller than 64 KiB and consumed immediately?",
         "yes" if small_immediate else "no")
    if small_immediate:
        return done(InterfacePath.ACP)

    evicting_traffic = profile.intervening_traffic_bytes > LARGE_BUFFER_BYTES
    node("eviction_traffic",
         "Can reordered work touch more than 16 MiB before the device reads?",
         "yes" if evicting_traffic else "no")
    if evicting_traffic:
        return done(InterfacePath.HPC)

    node("memory_intensive_background",
         "Are memory-intensive background tasks running?",
         "yes" if profile.background_memory_intensive else "no")
    if profile.background_memory_intensive:
        return done(InterfacePath.HPC)

    return done(InterfacePath.HP_C)


# --- cost-model ranking ------------------------------------------------------

# Tie-break order when totals are exactly equal.
_TIE_ORDER = (InterfacePath.HP_NC, InterfacePath.HPC, InterfacePath.ACP,
              InterfacePath.HP_C)


def legal_paths(direction: Direction) -> tuple[InterfacePath, ...]:
    if direction is Direction.PL_TO_PL:
        return (InterfacePath.HP_NC,)
    return _TIE_ORDER


def infer_pre_state(profile: WorkloadProfile, l2_size_bytes: int) -> PreState:
    """Residency guess at transfer time, from the profile alone.

    Delayed consumption, intervening traffic of cache scale, or a
    memory-intensive background all mean the buffer has likely been
    evicted by the time the device touches it; otherwise the CPU's last
    access (write for outbound flows, read for inbound) left it resident.
    """
    evicted = (profile.consume_latency is ConsumeLatency.DELAYED
               or profile.intervening_traffic_bytes >= l2_size_bytes
               or profile.background_memory_intensive)
    if evicted:
        return PreState.FLUSHED
    if profile.direction is Direction.CPU_TO_PL:
        return PreState.WRITTEN
    return PreState.READ


def _cpu_traffic_bytes(profile: WorkloadProfile) -> tuple[int, int]:
    """(reads, writes) the CPU makes against the buffer, per role.

    The CPU always produces or consumes the buffer once; the role scales
    the read traffic on top of that.
    """
    b = profile.buffer_bytes
    if profile.direction is Direction.PL_TO_CPU:
        return (b, 0)
    if profile.cpu_role is CpuRole.MOSTLY_WRITE:
        return (0, b)
    if profile.cpu_role is CpuRole.MIXED_READ_WRITE:
        return (b, b)
    return (2 * b, b)


def _nc_access_penalty(profile: WorkloadProfile, l2_size: int,
                       sw: SwCostParams) -> float:
    """Extra CPU time a non-cacheable buffer costs over a cacheable one."""
    reads, writes = _cpu_traffic_bytes(profile)
    penalty = 0.0
    if reads:
        base = reads / sw.cacheable_read_Bps
        penalty += base * (sw.nc_read_penalty - 1.0)
    if writes and profile.write_pattern is WritePattern.IRREGULAR:
        nc = irregular_write_cost(RegionKind.NON_CACHEABLE, writes, l2_size, sw)
        penalty += nc - writes / sw.cacheable_write_Bps
    return penalty


def _path_cost(path: InterfacePath, profile: WorkloadProfile,
               config: PlatformConfig, params: CalibrationParams,
               sw: SwCostParams) -> CostBreakdown:
    cache = CacheState(config)
    pre_kind = infer_pre_state(profile, config.l2_size_bytes)
    if path.uses_cacheable_buffer:
        pre = prepare_pre_state(0, profile.buffer_bytes, pre_kind, cache)
    else:
        pre = prepare_pre_state(0, profile.buffer_bytes, PreState.FLUSHED, cache)
    spec = TransferSpec(size_bytes=profile.buffer_bytes,
                        direction=profile.direction, path=path, pre_state=pre)
    result = simulate_transfer(spec, cache, config, params)

    maintenance_s = barrier_s = penalty_s = 0.0
    if path is InterfacePath.HP_C:
        maint = maintenance_cost([profile.buffer_bytes],
                                 contended=profile.background_memory_intensive,
                                 params=sw)
        maintenance_s = maint.flush_s
        barrier_s = maint.barrier_s
    elif path is InterfacePath.HP_NC:
        penalty_s = _nc_access_penalty(profile, config.l2_size_bytes, sw)
    return CostBreakdown(hw_transfer_s=result.elapsed_s,
                         maintenance_s=maintenance_s,
                         barrier_s=barrier_s,
                         cpu_access_penalty_s=penalty_s)


def rank_all(profile: WorkloadProfile, config: PlatformConfig,
             params: CalibrationParams, sw: SwCostParams,
             ) -> list[tuple[InterfacePath, CostBreakdown]]:
    """Price every legal path for the profile, cheapest first.

    Each path is simulated against a fresh cache prepared per
    :func:`infer_pre_state`.  Ties resolve in the fixed order
    HP (NC) < HPC < ACP < HP (C).
    """
    priced = []
    for path in legal_paths(profile.direction):
        cost = _path_cost(path, profile, config, params, sw)
        priced.append((path, cost))
    priced.sort(key=lambda item: (item[1].total_s, _TIE_ORDER.index(item[0])))
    return priced


# --- profile files -----------------------------------------------------------

_PROFILE_KEYS = {"direction", "buffer", "role", "pattern", "consume",
                 "intervening", "background"}

_DIRECTIONS = {"cpu_to_pl": Direction.CPU_TO_PL, "tx": Direction.CPU_TO_PL,
               "pl_to_cpu": Direction.PL_TO_CPU, "rx": Direction.PL_TO_CPU,
               "pl_to_pl": Direction.PL_TO_PL}

_ROLES = {"mostly_write": CpuRole.MOSTLY_WRITE,
          "mixed_read_write": CpuRole.MIXED_READ_WRITE,
          "mostly_read": CpuRole.MOSTLY_READ}

_PATTERNS = {"sequential": WritePattern.SEQUENTIAL,
             "makeable_sequential": WritePattern.MAKEABLE_SEQUENTIAL,
             "irregular": WritePattern.IRREGULAR}

_CONSUME = {"immediate": ConsumeLatency.IMMEDIATE,
            "delayed": ConsumeLatency.DELAYED}


def load_profile_file(path: str) -> WorkloadProfile:
    """Read a workload profile from ``key = value`` lines.

    Keys mirror the profile fields: direction, buffer, role, pattern,
    consume, intervening, background.  '#' starts a comment.
    """
    values: dict[str, str] = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataFileError(path, 0, f"cannot read file: {exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFileError(path, lineno, "expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip().lower()
            if key not in _PROFILE_KEYS:
                raise DataFileError(path, lineno, f"unknown profile key {key!r}")
            values[key] = value.strip().lower()

    def lookup(key: str, table: dict, default=None):
        if key not in values:
            if default is None:
                raise DataFileError(path, 0, f"missing required key {key!r}")
            return default
        if values[key] not in table:
            raise DataFileError(
                path, 0,
                f"bad {key} {values[key]!r}; expected one of {sorted(table)}")
        return table[values[key]]

    if "buffer" not in values:
        raise DataFileError(path, 0, "missing required key 'buffer'")
    try:
        buffer_bytes = parse_size(values["buffer"])
        intervening = parse_size(values.get("intervening", "0"))
        background = parse_bool(values.get("background", "false"))
    except ValueError as exc:
        raise DataFileError(path, 0, str(exc)) from exc

    return WorkloadProfile(
        buffer_bytes=buffer_bytes,
        direction=lookup("direction", _DIRECTIONS),
        cpu_role=lookup("role", _ROLES, CpuRole.MIXED_READ_WRITE),
        write_pattern=lookup("pattern", _PATTERNS, WritePattern.SEQUENTIAL),
        consume_latency=lookup("consume", _CONSUME, ConsumeLatency.DELAYED),
        intervening_traffic_bytes=intervening,
        background_memory_intensive=background,
    )
