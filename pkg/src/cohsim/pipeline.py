"""End-to-end scenarios: CPU stages, transfers, and accelerator stages.

A pipeline executes its stages strictly in order against one evolving
cache: CPU stages populate residency for cacheable buffers, transfers
consume it, accelerator stages contribute fixed compute time.  Per-stage
costs land in the shared cost-breakdown buckets:

  * CPU stage time (reads + pattern-aware writes)   -> cpu_access_penalty_s
  * transfer wire time and accelerator compute time -> hw_transfer_s
  * flush/invalidate work and barriers around
    manually-maintained transfers                   -> maintenance_s / barrier_s

:func:`compare_assignments` prices the four pure path assignments plus an
advisor-optimized one, deriving a workload profile per transfer from the
stages around it (see :func:`infer_profile` for the rules).

Scenario files are declarative line-based text; see :func:`load_scenario`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from . import advisor as _advisor
from .cache import CacheState
from .interconnect import CalibrationParams, simulate_transfer
from .platform import (ConsumeLatency, CostBreakdown, CpuRole, DataFileError,
                       Direction, InterfacePath, PlatformConfig,
                       SpecificationError, TransferSpec, WorkloadProfile,
                       WritePattern, parse_bool, parse_quantity, parse_size)
from .swcost import (CpuStage as SwCpuStage, RegionKind, SwCostParams,
                     cpu_stage_cost, maintenance_cost)


@dataclass(frozen=True)
class Buffer:
    name: str
    size_bytes: int
    base_addr: int
    internal: bool = False        # never transferred; always cacheable
    cpu_init_written: bool = False  # CPU filled it sequentially before the run


@dataclass(frozen=True)
class CpuComputeStage:
    name: str
    reads: tuple[tuple[Optional[str], int], ...]   # (buffer name or None, bytes)
    writes: tuple[tuple[Optional[str], int], ...]
    pattern: WritePattern


@dataclass(frozen=True)
class TransferStage:
    name: str
    direction: Direction          # CPU_TO_PL (tx) or PL_TO_CPU (rx)
    buffer: str
    size_bytes: int


@dataclass(frozen=True)
class AccelComputeStage:
    name: str
    time_s: float


Stage = Union[CpuComputeStage, TransferStage, AccelComputeStage]


@dataclass(frozen=True)
class Pipeline:
    name: str
    buffers: dict[str, Buffer]
    stages: tuple[Stage, ...]
    contended: bool = False       # barriers issued while memory is busy
    background_memory_intensive: bool = False

    def transfer_stages(self) -> list[TransferStage]:
        return [s for s in self.stages if isinstance(s, TransferStage)]


@dataclass(frozen=True)
class Scenario:
    name: str
    pipelines: tuple[Pipeline, ...]


@dataclass(frozen=True)
class StageCost:
    stage_name: str
    stage_kind: str
    cost: CostBreakdown


@dataclass(frozen=True)
class PipelineReport:
    pipeline_name: str
    assignment_label: str
    stage_costs: tuple[StageCost, ...]
    contended_barriers: bool

    @property
    def end_to_end_s(self) -> float:
        return sum(sc.cost.total_s for sc in self.stage_costs)

    def total(self) -> CostBreakdown:
        acc = CostBreakdown()
        for sc in self.stage_costs:
            acc = acc + sc.cost
        return acc


def validate_pipeline(pipeline: Pipeline) -> None:
    transfers = pipeline.transfer_stages()
    if not transfers:
        raise SpecificationError(
            f"pipeline {pipeline.name!r} has no transfer stage")
    for stage in pipeline.stages:
        if isinstance(stage, TransferStage):
            if stage.buffer not in pipeline.buffers:
                raise SpecificationError(
                    f"transfer {stage.name!r} references unknown buffer "
                    f"{stage.buffer!r}")
            if pipeline.buffers[stage.buffer].internal:
                raise SpecificationError(
                    f"transfer {stage.name!r} moves internal buffer "
                    f"{stage.buffer!r}")
        elif isinstance(stage, CpuComputeStage):
            for ref, _ in stage.reads + stage.writes:
                if ref is not None and ref not in pipeline.buffers:
                    raise SpecificationError(
                        f"cpu stage {stage.name!r} references unknown buffer "
                        f"{ref!r}")


# --- profile inference -------------------------------------------------------


def _cpu_traffic_on(pipeline: Pipeline, buffer: str) -> tuple[int, int]:
    """Total (reads, writes) bytes CPU stages make against a buffer."""
    reads = writes = 0
    for stage in pipeline.stages:
        if isinstance(stage, CpuComputeStage):
            reads += sum(b for ref, b in stage.reads if ref == buffer)
            writes += sum(b for ref, b in stage.writes if ref == buffer)
    buf = pipeline.buffers[buffer]
    if buf.cpu_init_written:
        writes += buf.size_bytes
    return reads, writes


def _writer_pattern(pipeline: Pipeline, buffer: str) -> WritePattern:
    for stage in pipeline.stages:
        if isinstance(stage, CpuComputeStage):
            if any(ref == buffer for ref, _ in stage.writes):
                return stage.pattern
    return WritePattern.SEQUENTIAL


def _consumer_index(pipeline: Pipeline, transfer_index: int) -> Optional[int]:
    """First later stage that uses the transferred data.

    For an outbound transfer that is the next accelerator stage; for an
    inbound transfer, the next CPU stage reading the buffer (falling back
    to the next accelerator stage for device-to-device hops).
    """
    stage = pipeline.stages[transfer_index]
    assert isinstance(stage, TransferStage)
    for i in range(transfer_index + 1, len(pipeline.stages)):
        later = pipeline.stages[i]
        if stage.direction is Direction.CPU_TO_PL:
            if isinstance(later, AccelComputeStage):
                return i
        else:
            if isinstance(later, CpuComputeStage) and any(
                    ref == stage.buffer for ref, _ in later.reads):
                return i
            if isinstance(later, AccelComputeStage):
                return i
    return None


def _bytes_moved(stage: Stage) -> int:
    if isinstance(stage, CpuComputeStage):
        return (sum(b for _, b in stage.reads)
                + sum(b for _, b in stage.writes))
    if isinstance(stage, TransferStage):
        return stage.size_bytes
    return 0


def infer_profile(pipeline: Pipeline, transfer_index: int) -> WorkloadProfile:
    """Derive the advisor's workload profile for one transfer stage.

    Rules:
      * direction: a buffer no CPU stage touches (and the CPU never
        initialized) is device-to-device traffic regardless of the wire
        direction; otherwise outbound transfers are CPU-to-device and
        inbound ones device-to-CPU.
      * cpu_role: from the CPU byte mix on the buffer (writes only ->
        mostly-write, reads only -> mostly-read, both -> mixed).
      * write_pattern: the pattern of the CPU stage writing the buffer;
        sequential if the CPU only initialized it up front.
      * consume latency: immediate when only other transfers sit between
        this one and its consumer, delayed otherwise.
      * intervening traffic: bytes moved by stages strictly between the
        transfer and its consumer.
    """
    stage = pipeline.stages[transfer_index]
    if not isinstance(stage, TransferStage):
        raise SpecificationError("infer_profile needs a transfer stage index")
    reads, writes = _cpu_traffic_on(pipeline, stage.buffer)

    if reads == 0 and writes == 0:
        direction = Direction.PL_TO_PL
    elif stage.direction is Direction.CPU_TO_PL:
        direction = Direction.CPU_TO_PL
    else:
        direction = Direction.PL_TO_CPU

    if writes and not reads:
        role = CpuRole.MOSTLY_WRITE
    elif reads and not writes:
        role = CpuRole.MOSTLY_READ
    else:
        role = CpuRole.MIXED_READ_WRITE

    consumer = _consumer_index(pipeline, transfer_index)
    intervening = 0
    immediate = True
    if consumer is None:
        immediate = False
    else:
        for i in range(transfer_index + 1, consumer):
            between = pipeline.stages[i]
            intervening += _bytes_moved(between)
            if not isinstance(between, TransferStage):
                immediate = False

    return WorkloadProfile(
        buffer_bytes=max(stage.size_bytes, 1),
        direction=direction,
        cpu_role=role,
        write_pattern=_writer_pattern(pipeline, stage.buffer),
        consume_latency=(ConsumeLatency.IMMEDIATE if immediate
                         else ConsumeLatency.DELAYED),
        intervening_traffic_bytes=intervening,
        background_memory_intensive=pipeline.background_memory_intensive,
    )


def optimized_assignment(pipeline: Pipeline) -> dict[str, InterfacePath]:
    """Per-transfer path choices from the decision tree."""
    assignment = {}
    for i, stage in enumerate(pipeline.stages):
        if isinstance(stage, TransferStage):
            profile = infer_profile(pipeline, i)
            assignment[stage.name] = _advisor.recommend(profile).path
    return assignment


# --- execution ---------------------------------------------------------------


def _buffer_kinds(pipeline: Pipeline,
                  assignment: dict[str, InterfacePath]) -> dict[str, RegionKind]:
    """A buffer is non-cacheable iff some transfer moves it on HP (NC)."""
    kinds = {name: RegionKind.CACHEABLE for name in pipeline.buffers}
    for stage in pipeline.transfer_stages():
        if assignment[stage.name] is InterfacePath.HP_NC:
            kinds[stage.buffer] = RegionKind.NON_CACHEABLE
    return kinds


def run_pipeline(pipeline: Pipeline, assignment: dict[str, InterfacePath],
                 config: PlatformConfig, params: CalibrationParams,
                 sw: SwCostParams, label: str = "custom",
                 seed: Optional[int] = None) -> PipelineReport:
    """Execute the stages in order against one evolving cache.

    ``assignment`` maps every transfer stage name to a path.  CPU stages
    touch the cache for cacheable buffers only; manually-maintained
    transfers flush (outbound) or invalidate (inbound) their buffer and
    pay maintenance plus one barrier.
    """
    validate_pipeline(pipeline)
    missing = [t.name for t in pipeline.transfer_stages()
               if t.name not in assignment]
    if missing:
        raise SpecificationError(
            "assignment misses transfer stages: " + ", ".join(missing))

    kinds = _buffer_kinds(pipeline, assignment)
    cache = CacheState(config, seed=seed)
    stage_costs: list[StageCost] = []

    for stage in pipeline.stages:
        if isinstance(stage, CpuComputeStage):
            cost = _run_cpu_stage(stage, pipeline, kinds, cache, config, sw)
            stage_costs.append(StageCost(stage.name, "cpu", cost))
        elif isinstance(stage, AccelComputeStage):
            cost = CostBreakdown(hw_transfer_s=stage.time_s)
            stage_costs.append(StageCost(stage.name, "accel", cost))
        else:
            cost = _run_transfer_stage(stage, pipeline, assignment[stage.name],
                                       cache, config, params, sw)
            stage_costs.append(StageCost(stage.name, "transfer", cost))

    return PipelineReport(pipeline.name, label, tuple(stage_costs),
                          contended_barriers=pipeline.contended)


def _run_cpu_stage(stage: CpuComputeStage, pipeline: Pipeline,
                   kinds: dict[str, RegionKind], cache: CacheState,
                   config: PlatformConfig, sw: SwCostParams) -> CostBreakdown:
    total = 0.0
    for ref, nbytes in stage.reads:
        if nbytes == 0:
            continue
        kind = kinds.get(ref, RegionKind.CACHEABLE)
        total += cpu_stage_cost(
            SwCpuStage(nbytes, 0, stage.pattern, kind, RegionKind.CACHEABLE),
            config.l2_size_bytes, sw)
        if kind is RegionKind.CACHEABLE and ref is not None:
            buf = pipeline.buffers[ref]
            cache.populate_range(buf.base_addr, min(nbytes, buf.size_bytes),
                                 dirty=False)
    for ref, nbytes in stage.writes:
        if nbytes == 0:
            continue
        kind = kinds.get(ref, RegionKind.CACHEABLE)
        total += cpu_stage_cost(
            SwCpuStage(0, nbytes, stage.pattern, RegionKind.CACHEABLE, kind),
            config.l2_size_bytes, sw)
        if kind is RegionKind.CACHEABLE and ref is not None:
            buf = pipeline.buffers[ref]
            cache.populate_range(buf.base_addr, min(nbytes, buf.size_bytes),
                                 dirty=True)
    return CostBreakdown(cpu_access_penalty_s=total)


def _run_transfer_stage(stage: TransferStage, pipeline: Pipeline,
                        path: InterfacePath, cache: CacheState,
                        config: PlatformConfig, params: CalibrationParams,
                        sw: SwCostParams) -> CostBreakdown:
    if stage.size_bytes == 0:
        return CostBreakdown()
    buf = pipeline.buffers[stage.buffer]
    maintenance_s = barrier_s = 0.0
    if path is InterfacePath.HP_C:
        maint = maintenance_cost([stage.size_bytes],
                                 contended=pipeline.contended, params=sw)
        maintenance_s, barrier_s = maint.flush_s, maint.barrier_s
        if stage.direction is Direction.CPU_TO_PL:
            cache.flush_range(buf.base_addr, stage.size_bytes)
        else:
            cache.invalidate_range(buf.base_addr, stage.size_bytes)
    spec = TransferSpec(size_bytes=stage.size_bytes, direction=stage.direction,
                        path=path, base_addr=buf.base_addr)
    result = simulate_transfer(spec, cache, config, params)
    return CostBreakdown(hw_transfer_s=result.elapsed_s,
                         maintenance_s=maintenance_s, barrier_s=barrier_s)


PURE_ASSIGNMENT_LABELS = (
    ("pure " + InterfacePath.HP_NC.label, InterfacePath.HP_NC),
    ("pure " + InterfacePath.HP_C.label, InterfacePath.HP_C),
    ("pure " + InterfacePath.HPC.label, InterfacePath.HPC),
    ("pure " + InterfacePath.ACP.label, InterfacePath.ACP),
)

OPTIMIZED_LABEL = "optimized"


def compare_assignments(pipeline: Pipeline, config: PlatformConfig,
                        params: CalibrationParams, sw: SwCostParams,
                        seed: Optional[int] = None) -> list[PipelineReport]:
    """Four pure single-path baselines plus the advisor-optimized assignment."""
    validate_pipeline(pipeline)
    transfers = pipeline.transfer_stages()
    reports = []
    for label, path in PURE_ASSIGNMENT_LABELS:
        assignment = {t.name: path for t in transfers}
        reports.append(run_pipeline(pipeline, assignment, config, params, sw,
                                    label=label, seed=seed))
    reports.append(run_pipeline(pipeline, optimized_assignment(pipeline),
                                config, params, sw, label=OPTIMIZED_LABEL,
                                seed=seed))
    return reports


def compare_scenario(scenario: Scenario, config: PlatformConfig,
                     params: CalibrationParams, sw: SwCostParams,
                     seed: Optional[int] = None,
                     ) -> dict[str, list[PipelineReport]]:
    """compare_assignments for every pipeline in the scenario, in file order."""
    return {p.name: compare_assignments(p, config, params, sw, seed=seed)
            for p in scenario.pipelines}


def scenario_totals(reports_by_pipeline: dict[str, list[PipelineReport]],
                    ) -> dict[str, float]:
    """Scenario-level end-to-end per assignment label: sum over pipelines."""
    totals: dict[str, float] = {}
    for reports in reports_by_pipeline.values():
        for report in reports:
            totals[report.assignment_label] = (
                totals.get(report.assignment_label, 0.0) + report.end_to_end_s)
    return totals


# --- scenario files ----------------------------------------------------------

_PATTERNS = {"sequential": WritePattern.SEQUENTIAL,
             "makeable_sequential": WritePattern.MAKEABLE_SEQUENTIAL,
             "irregular": WritePattern.IRREGULAR}


def load_scenario(path: str) -> Scenario:
    """Parse a scenario file.

    Line grammar (one directive per line, '#' comments):

        scenario <name>
        pipeline <name>                    # starts a new pipeline
        contended <bool>                   # per pipeline; barriers contended
        background <bool>                  # memory-intensive background tasks
        buffer <name> <size> [internal] [init=cpu]
        cpu <name> [read=<buf>:<bytes>]... [write=<buf>:<bytes>]... pattern=<p>
        xfer <name> <tx|rx> <buffer> [size=<bytes>]
        accel <name> time=<duration>

    Sizes accept suffixes (64K, 2MiB); durations accept s/ms/us/ns.
    """
    scenario_name = None
    pipelines: list[Pipeline] = []
    current: Optional[dict] = None
    next_base = 0x1000_0000

    def finish_current():
        nonlocal current
        if current is None:
            return
        pipelines.append(Pipeline(
            name=current["name"],
            buffers=current["buffers"],
            stages=tuple(current["stages"]),
            contended=current["contended"],
            background_memory_intensive=current["background"],
        ))
        current = None

    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataFileError(path, 0, f"cannot read file: {exc}") from exc

    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            directive = tokens[0].lower()

            def err(message: str) -> DataFileError:
                return DataFileError(path, lineno, message)

            if directive == "scenario":
                if len(tokens) != 2:
                    raise err("usage: scenario <name>")
                scenario_name = tokens[1]
                continue

            if directive == "pipeline":
                if len(tokens) != 2:
                    raise err("usage: pipeline <name>")
                finish_current()
                current = {"name": tokens[1], "buffers": {}, "stages": [],
                           "contended": False, "background": False}
                continue

            if current is None:
                raise err(f"{directive!r} before any 'pipeline' line")

            if directive in ("contended", "background"):
                if len(tokens) != 2:
                    raise err(f"usage: {directive} <true|false>")
                try:
                    current[directive] = parse_bool(tokens[1])
                except ValueError as exc:
                    raise err(str(exc)) from exc

            elif directive == "buffer":
                if len(tokens) < 3:
                    raise err("usage: buffer <name> <size> [internal] [init=cpu]")
                name = tokens[1]
                if name in current["buffers"]:
                    raise err(f"duplicate buffer {name!r}")
                try:
                    size = parse_size(tokens[2])
                except ValueError as exc:
                    raise err(str(exc)) from exc
                internal = "internal" in tokens[3:]
                init_cpu = "init=cpu" in tokens[3:]
                for extra in tokens[3:]:
                    if extra not in ("internal", "init=cpu"):
                        raise err(f"unknown buffer attribute {extra!r}")
                # line-align buffer bases in the flat model address space
                current["buffers"][name] = Buffer(
                    name, size, next_base, internal=internal,
                    cpu_init_written=init_cpu)
                next_base += ((size + 4095) // 4096 + 1) * 4096

            elif directive == "cpu":
                if len(tokens) < 3:
                    raise err("usage: cpu <name> [read=buf:bytes]... "
                              "[write=buf:bytes]... pattern=<pattern>")
                name = tokens[1]
                reads: list[tuple[Optional[str], int]] = []
                writes: list[tuple[Optional[str], int]] = []
                pattern = None
                for tok in tokens[2:]:
                    key, _, value = tok.partition("=")
                    if not value:
                        raise err(f"expected key=value, got {tok!r}")
                    if key in ("read", "write"):
                        ref, _, amount = value.partition(":")
                        if not amount:
                            raise err(f"expected {key}=buffer:bytes, got {tok!r}")
                        try:
                            nbytes = parse_size(amount)
                        except ValueError as exc:
                            raise err(str(exc)) from exc
                        target = None if ref in ("-", "mem") else ref
                        (reads if key == "read" else writes).append((target, nbytes))
                    elif key == "pattern":
                        if value not in _PATTERNS:
                            raise err(f"unknown pattern {value!r}")
                        pattern = _PATTERNS[value]
                    else:
                        raise err(f"unknown cpu attribute {key!r}")
                if pattern is None:
                    raise err("cpu stage needs pattern=<pattern>")
                current["stages"].append(CpuComputeStage(
                    name, tuple(reads), tuple(writes), pattern))

            elif directive == "xfer":
                if len(tokens) < 4:
                    raise err("usage: xfer <name> <tx|rx> <buffer> [size=<bytes>]")
                name, dname, bufname = tokens[1], tokens[2].lower(), tokens[3]
                if dname == "tx":
                    direction = Direction.CPU_TO_PL
                elif dname == "rx":
                    direction = Direction.PL_TO_CPU
                else:
                    raise err(f"direction must be tx or rx, got {tokens[2]!r}")
                if bufname not in current["buffers"]:
                    raise err(f"unknown buffer {bufname!r}")
                size = current["buffers"][bufname].size_bytes
                for tok in tokens[4:]:
                    key, _, value = tok.partition("=")
                    if key != "size" or not value:
                        raise err(f"unknown xfer attribute {tok!r}")
                    try:
                        size = parse_size(value)
                    except ValueError as exc:
                        raise err(str(exc)) from exc
                current["stages"].append(TransferStage(name, direction,
                                                       bufname, size))

            elif directive == "accel":
                if len(tokens) != 3:
                    raise err("usage: accel <name> time=<duration>")
                key, _, value = tokens[2].partition("=")
                if key != "time" or not value:
                    raise err("accel stage needs time=<duration>")
                try:
                    time_s = float(parse_quantity(value))
                except ValueError as exc:
                    raise err(str(exc)) from exc
                current["stages"].append(AccelComputeStage(tokens[1], time_s))

            else:
                raise err(f"unknown directive {directive!r}")

    finish_current()
    if scenario_name is None:
        raise DataFileError(path, 0, "missing 'scenario <name>' line")
    if not pipelines:
        raise DataFileError(path, 0, "scenario declares no pipeline")
    for pipeline in pipelines:
        try:
            validate_pipeline(pipeline)
        except SpecificationError as exc:
            raise DataFileError(path, 0, str(exc)) from exc
    return Scenario(scenario_name, tuple(pipelines))
