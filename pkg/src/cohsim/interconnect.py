"""Effective bandwidth and elapsed time for one transfer.

The model is analytical cycle accounting per beat (one beat = one bus-width
chunk), not discrete-event queuing: the quantity of interest is steady-state
bandwidth versus transfer size and cache residency.

Path semantics:

  * HP (either allocation): startup latency plus one cycle per beat,
    straight to memory; the cache is never consulted.
  * HPC TX (device reads): every beat carries a snoop cost; resident dirty
    bytes additionally pay a per-byte penalty, modeling the slow
    cache-to-device data path.  Snooped dirty lines are invalidated.
  * HPC RX (device writes): runs at a fixed fraction of the HP curve; all
    stale lines overlapping the buffer are invalidated (the coherent bus
    only offers device-to-cache coherency).
  * ACP: every beat is a cache access with allocation; hit beats and miss
    beats cost differently, and allocations past capacity evict earlier
    lines of the same transfer (self-eviction), which is what collapses
    bandwidth for large buffers.

Coefficients ship as values fitted against the digitized anchor file in
``data/anchors.csv``; :func:`calibrate` reproduces them from any anchor set.
"""

from __future__ import annotations

import csv
import importlib.resources
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .cache import CacheState
from .platform import (BufferPreState, DataFileError, Direction,
                       InterfacePath, PlatformConfig, PreState,
                       SpecificationError, TransferSpec, peak_bandwidth,
                       _read_ini)


@dataclass(frozen=True)
class HpParams:
    startup_cycles: float = 8.0


@dataclass(frozen=True)
class HpcParams:
    startup_cycles: float = 8.0
    snoop_per_beat_cycles: float = 0.05
    cached_tx_per_byte_penalty_s: float = 1.0e-9
    rx_derate: float = 0.95


@dataclass(frozen=True)
class AcpParams:
    hit_per_beat_cycles: float = 0.0667
    miss_per_beat_cycles: float = 2.6923


@dataclass(frozen=True)
class CalibrationParams:
    """Per-path timing coefficients plus a note naming their origin."""

    hp: HpParams = HpParams()
    hpc: HpcParams = HpcParams()
    acp: AcpParams = AcpParams()
    provenance: str = "built-in defaults (fit of data/anchors.csv)"

    def __post_init__(self):
        values = [self.hp.startup_cycles, self.hpc.startup_cycles,
                  self.hpc.snoop_per_beat_cycles,
                  self.hpc.cached_tx_per_byte_penalty_s,
                  self.acp.hit_per_beat_cycles, self.acp.miss_per_beat_cycles]
        if any(v < 0 for v in values):
            raise ValueError("calibration coefficients must be >= 0")
        if not 0.0 < self.hpc.rx_derate <= 1.0:
            raise ValueError("rx_derate must lie in (0, 1]")


class CalibrationError(ValueError):
    """Raised when an anchor set cannot determine every coefficient."""

    def __init__(self, missing: list[str]):
        super().__init__("anchor classes missing or empty: " + ", ".join(missing))
        self.missing = missing


@dataclass(frozen=True)
class CacheEvents:
    hits: int = 0
    misses: int = 0
    evictions: int = 0
    snoops: int = 0


@dataclass(frozen=True)
class TransferResult:
    elapsed_s: float
    effective_bandwidth: float
    beats: int
    cache_events: CacheEvents
    post_state: CacheState


def _beats(size_bytes: int, beat_bytes: int) -> int:
    return -(-size_bytes // beat_bytes)


def prepare_pre_state(base: int, length: int, kind: PreState,
                      cache: CacheState) -> BufferPreState:
    """Put the buffer into the requested state and report its residency.

    WRITTEN write-accesses every line (resident dirty), READ read-accesses
    every line (resident clean), FLUSHED cleans and drops the range.
    """
    if kind is PreState.WRITTEN:
        cache.populate_range(base, length, dirty=True)
    elif kind is PreState.READ:
        cache.populate_range(base, length, dirty=False)
    elif kind is PreState.FLUSHED:
        cache.flush_range(base, length)
    fraction = cache.resident_fraction(base, length) if length > 0 else 0.0
    return BufferPreState(kind, fraction)


def simulate_transfer(spec: TransferSpec, cache: CacheState,
                      config: PlatformConfig,
                      params: CalibrationParams) -> TransferResult:
    """Model one transfer against the current cache contents.

    The cache is consumed in place (snoops invalidate, allocations evict);
    the result's ``post_state`` is the same object.  Deterministic for a
    fixed (spec, cache contents, seed, params).
    """
    if spec.direction is Direction.PL_TO_PL and spec.path in (
            InterfacePath.HPC, InterfacePath.ACP):
        raise SpecificationError(
            "device-to-device transfers only run on the direct memory port")
    spec = spec.aligned(config.l2_line_bytes)
    freq = config.bus_freq_hz
    beat_bytes = config.beat_bytes
    size = spec.size_bytes
    base = spec.base_addr
    beats = _beats(size, beat_bytes)
    hits = misses = evictions = snoops = 0

    if spec.path in (InterfacePath.HP_NC, InterfacePath.HP_C):
        elapsed = (params.hp.startup_cycles + beats) / freq

    elif spec.path is InterfacePath.HPC:
        if spec.direction is Direction.CPU_TO_PL:
            dirty_bytes = cache.dirty_resident_bytes(base, size)
            cycles = (params.hpc.startup_cycles
                      + beats * (1.0 + params.hpc.snoop_per_beat_cycles))
            elapsed = (cycles / freq
                       + dirty_bytes * params.hpc.cached_tx_per_byte_penalty_s)
            evictions = cache.invalidate_dirty_range(base, size)
        else:
            hp_elapsed = (params.hp.startup_cycles + beats) / freq
            elapsed = hp_elapsed / params.hpc.rx_derate
            evictions = cache.invalidate_range(base, size)
        snoops = beats

    else:  # ACP: every beat goes through the cache
        write = spec.direction is Direction.PL_TO_CPU
        ev_before = cache.evictions
        hit_beats, miss_beats, hit_lines, miss_lines = _acp_access(
            cache, base, size, beat_bytes, write)
        hits, misses = hit_lines, miss_lines
        evictions = cache.evictions - ev_before
        cycles = (hit_beats * (1.0 + params.acp.hit_per_beat_cycles)
                  + miss_beats * (1.0 + params.acp.miss_per_beat_cycles))
        beats = hit_beats + miss_beats
        elapsed = cycles / freq

    bandwidth = size / elapsed
    return TransferResult(
        elapsed_s=elapsed,
        effective_bandwidth=bandwidth,
        beats=beats,
        cache_events=CacheEvents(hits, misses, evictions, snoops),
        post_state=cache,
    )


def _acp_access(cache: CacheState, base: int, size: int, beat_bytes: int,
                write: bool) -> tuple[int, int, int, int]:
    """Access every line-chunk of the range; returns beat and line tallies.

    Beats per line-chunk are rounded up individually, so partial head/tail
    lines cost whole beats like the bus would issue them.
    """
    line_bytes = cache.line_bytes
    end = base + size
    full_per_line = line_bytes // beat_bytes
    hit_beats = miss_beats = hit_lines = miss_lines = 0

    head_start = base
    head_end = min(end, (base // line_bytes + 1) * line_bytes)
    if head_start % line_bytes or head_end - head_start < line_bytes:
        chunk = head_end - head_start
        b = -(-chunk // beat_bytes)
        if cache.access(head_start, write).hit:
            hit_beats += b
            hit_lines += 1
        else:
            miss_beats += b
            miss_lines += 1
        cursor = head_end
    else:
        cursor = base

    aligned_end = (end // line_bytes) * line_bytes
    if aligned_end > cursor:
        h, m = cache.access_range(cursor, aligned_end - cursor, write)
        hit_lines += h
        miss_lines += m
        hit_beats += h * full_per_line
        miss_beats += m * full_per_line
        cursor = aligned_end

    if cursor < end:
        chunk = end - cursor
        b = -(-chunk // beat_bytes)
        if cache.access(cursor, write).hit:
            hit_beats += b
            hit_lines += 1
        else:
            miss_beats += b
            miss_lines += 1

    return hit_beats, miss_beats, hit_lines, miss_lines


# --- sweeps ------------------------------------------------------------------

# Raw-bandwidth measurement matrix: per direction, the (path, preparation)
# pairs that are distinguishable at the interface level.  The direct port is
# listed once: non-cacheable vs cacheable allocation differ only in software
# cost, not raw bandwidth.
TX_MATRIX: tuple[tuple[InterfacePath, PreState], ...] = (
    (InterfacePath.HP_NC, PreState.NONE),
    (InterfacePath.HPC, PreState.WRITTEN),
    (InterfacePath.HPC, PreState.FLUSHED),
    (InterfacePath.ACP, PreState.WRITTEN),
    (InterfacePath.ACP, PreState.FLUSHED),
)

RX_MATRIX: tuple[tuple[InterfacePath, PreState], ...] = (
    (InterfacePath.HP_NC, PreState.NONE),
    (InterfacePath.HPC, PreState.READ),
    (InterfacePath.HPC, PreState.FLUSHED),
    (InterfacePath.ACP, PreState.READ),
    (InterfacePath.ACP, PreState.FLUSHED),
)


@dataclass(frozen=True)
class SweepRow:
    path: InterfacePath
    direction: Direction
    pre_state: PreState
    size_bytes: int
    bandwidth_Bps: float
    elapsed_s: float


def sweep(sizes: Sequence[int], direction: Direction, config: PlatformConfig,
          params: CalibrationParams, seed: Optional[int] = None,
          matrix: Optional[Sequence[tuple[InterfacePath, PreState]]] = None,
          ) -> list[SweepRow]:
    """Run the raw-bandwidth matrix over ``sizes``, one fresh cache per run."""
    if not sizes:
        raise SpecificationError("sweep needs at least one size")
    if list(sizes) != sorted(sizes):
        raise SpecificationError("sweep sizes must be ascending")
    if matrix is None:
        matrix = TX_MATRIX if direction is Direction.CPU_TO_PL else RX_MATRIX
    rows = []
    for path, pre in matrix:
        for size in sizes:
            cache = CacheState(config, seed=seed)
            pre_state = prepare_pre_state(0, size, pre, cache)
            spec = TransferSpec(size_bytes=size, direction=direction,
                                path=path, pre_state=pre_state, base_addr=0)
            result = simulate_transfer(spec, cache, config, params)
            rows.append(SweepRow(path, direction, pre, size,
                                 result.effective_bandwidth, result.elapsed_s))
    return rows


SWEEP_CSV_HEADER = ("path", "direction", "pre_state", "size_bytes",
                    "bandwidth_Bps", "elapsed_s")

_PATH_CSV_NAMES = {
    InterfacePath.HP_NC: "hp",
    InterfacePath.HP_C: "hp",
    InterfacePath.HPC: "hpc",
    InterfacePath.ACP: "acp",
}

_DIRECTION_CSV_NAMES = {
    Direction.CPU_TO_PL: "tx",
    Direction.PL_TO_CPU: "rx",
    Direction.PL_TO_PL: "pl_pl",
}


def sweep_rows_to_csv(rows: Iterable[SweepRow], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SWEEP_CSV_HEADER)
    for row in rows:
        writer.writerow([
            _PATH_CSV_NAMES[row.path],
            _DIRECTION_CSV_NAMES[row.direction],
            row.pre_state.value,
            row.size_bytes,
            f"{row.bandwidth_Bps:.6g}",
            f"{row.elapsed_s:.9g}",
        ])


# --- calibration -------------------------------------------------------------


@dataclass(frozen=True)
class AnchorPoint:
    """One digitized bandwidth observation used to fit coefficients."""

    path: str               # "hp" | "hpc" | "acp"
    direction: Direction
    pre_state: PreState
    size_bytes: int
    bandwidth_Bps: float
    source: str = ""


def load_anchor_file(path: str) -> list[AnchorPoint]:
    """Read anchors from CSV (path,direction,pre_state,size_bytes,bandwidth_Bps,source)."""
    anchors = []
    directions = {"tx": Direction.CPU_TO_PL, "rx": Direction.PL_TO_CPU}
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataFileError(path, 0, f"cannot read file: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        for lineno, raw in enumerate(reader, start=1):
            if not raw or raw[0].lstrip().startswith("#"):
                continue
            if raw[0] == "path":  # header
                continue
            if len(raw) < 5:
                raise DataFileError(path, lineno, "expected at least 5 columns")
            kind = raw[0].strip().lower()
            if kind not in ("hp", "hpc", "acp"):
                raise DataFileError(path, lineno, f"unknown path {raw[0]!r}")
            dname = raw[1].strip().lower()
            if dname not in directions:
                raise DataFileError(path, lineno, f"unknown direction {raw[1]!r}")
            try:
                pre = PreState(raw[2].strip().lower())
                size = int(raw[3])
                bw = float(raw[4])
            except ValueError as exc:
                raise DataFileError(path, lineno, str(exc)) from exc
            if size <= 0 or bw <= 0:
                raise DataFileError(path, lineno, "size and bandwidth must be positive")
            source = raw[5].strip() if len(raw) > 5 else ""
            anchors.append(AnchorPoint(kind, directions[dname], pre, size, bw, source))
    return anchors


def default_anchor_path() -> str:
    return str(importlib.resources.files("cohsim").joinpath("data/anchors.csv"))


def _fit_scalar(residual_fn, x0: float, upper: float = np.inf) -> float:
    out = least_squares(residual_fn, x0=[x0], bounds=([0.0], [upper]))
    return float(out.x[0])


def calibrate(anchors: Sequence[AnchorPoint],
              config: PlatformConfig) -> CalibrationParams:
    """Fit per-path coefficients to anchor bandwidths by least squares.

    Residuals are relative bandwidth errors, so anchors at different sizes
    weigh equally.  Coefficients are fit in dependency order (direct-port
    startup first, snoop cost on top of it, and so on).  The coherent
    port's startup is not separately identifiable from bandwidth anchors
    and reuses the direct-port fit.
    """
    freq = config.bus_freq_hz
    beat_bytes = config.beat_bytes
    l2 = config.l2_size_bytes

    hp = [a for a in anchors if a.path == "hp"]
    hpc_tx_fl = [a for a in anchors
                 if a.path == "hpc" and a.direction is Direction.CPU_TO_PL
                 and a.pre_state is PreState.FLUSHED]
    hpc_tx_wr = [a for a in anchors
                 if a.path == "hpc" and a.direction is Direction.CPU_TO_PL
                 and a.pre_state is PreState.WRITTEN]
    hpc_rx = [a for a in anchors
              if a.path == "hpc" and a.direction is Direction.PL_TO_CPU]
    acp_hit = [a for a in anchors
               if a.path == "acp" and a.pre_state in (PreState.WRITTEN, PreState.READ)
               and a.size_bytes <= l2]
    acp_miss = [a for a in anchors if a.path == "acp"
                and a.pre_state is PreState.FLUSHED]

    missing = []
    for name, group in (("hp", hp),
                        ("hpc-tx-flushed", hpc_tx_fl),
                        ("hpc-tx-written", hpc_tx_wr),
                        ("hpc-rx", hpc_rx),
                        ("acp-resident (written/read at sizes <= L2)", acp_hit),
                        ("acp-flushed", acp_miss)):
        if not group:
            missing.append(name)
    if missing:
        raise CalibrationError(missing)

    def hp_bw(size: int, startup: float) -> float:
        return size / ((startup + _beats(size, beat_bytes)) / freq)

    startup = _fit_scalar(
        lambda x: [(hp_bw(a.size_bytes, x[0]) - a.bandwidth_Bps) / a.bandwidth_Bps
                   for a in hp],
        x0=1.0)

    def hpc_fl_bw(size: int, snoop: float) -> float:
        cycles = startup + _beats(size, beat_bytes) * (1.0 + snoop)
        return size / (cycles / freq)

    snoop = _fit_scalar(
        lambda x: [(hpc_fl_bw(a.size_bytes, x[0]) - a.bandwidth_Bps) / a.bandwidth_Bps
                   for a in hpc_tx_fl],
        x0=0.01)

    def hpc_wr_bw(size: int, pen: float) -> float:
        cycles = startup + _beats(size, beat_bytes) * (1.0 + snoop)
        elapsed = cycles / freq + min(size, l2) * pen
        return size / elapsed

    pen = _fit_scalar(
        lambda x: [(hpc_wr_bw(a.size_bytes, x[0]) - a.bandwidth_Bps) / a.bandwidth_Bps
                   for a in hpc_tx_wr],
        x0=1e-10)

    derate = _fit_scalar(
        lambda x: [(hp_bw(a.size_bytes, startup) * x[0] - a.bandwidth_Bps)
                   / a.bandwidth_Bps for a in hpc_rx],
        x0=1.0, upper=1.0)

    def acp_bw(size: int, per_beat: float) -> float:
        cycles = _beats(size, beat_bytes) * (1.0 + per_beat)
        return size / (cycles / freq)

    hit_c = _fit_scalar(
        lambda x: [(acp_bw(a.size_bytes, x[0]) - a.bandwidth_Bps) / a.bandwidth_Bps
                   for a in acp_hit],
        x0=0.1)
    miss_c = _fit_scalar(
        lambda x: [(acp_bw(a.size_bytes, x[0]) - a.bandwidth_Bps) / a.bandwidth_Bps
                   for a in acp_miss],
        x0=2.0)

    params = CalibrationParams(
        hp=HpParams(startup_cycles=startup),
        hpc=HpcParams(startup_cycles=startup, snoop_per_beat_cycles=snoop,
                      cached_tx_per_byte_penalty_s=pen, rx_derate=derate),
        acp=AcpParams(hit_per_beat_cycles=hit_c, miss_per_beat_cycles=miss_c),
        provenance="",
    )

    residual = _max_residual(params, anchors, config)
    note = (f"fit of {len(anchors)} anchors; "
            f"max relative residual {residual:.2%}")
    return replace(params, provenance=note)


def _max_residual(params: CalibrationParams, anchors: Sequence[AnchorPoint],
                  config: PlatformConfig) -> float:
    """Worst relative error of the fitted analytic curves over the anchors.

    Skips anchor classes the fit does not model in closed form (resident
    transfers larger than L2, whose hit rate comes from simulation).
    """
    freq = config.bus_freq_hz
    beat_bytes = config.beat_bytes
    l2 = config.l2_size_bytes
    worst = 0.0
    for a in anchors:
        beats = _beats(a.size_bytes, beat_bytes)
        if a.path == "hp":
            bw = a.size_bytes / ((params.hp.startup_cycles + beats) / freq)
        elif a.path == "hpc" and a.direction is Direction.PL_TO_CPU:
            hp_bw = a.size_bytes / ((params.hp.startup_cycles + beats) / freq)
            bw = hp_bw * params.hpc.rx_derate
        elif a.path == "hpc":
            cycles = (params.hpc.startup_cycles
                      + beats * (1.0 + params.hpc.snoop_per_beat_cycles))
            elapsed = cycles / freq
            if a.pre_state is PreState.WRITTEN:
                elapsed += min(a.size_bytes, l2) * params.hpc.cached_tx_per_byte_penalty_s
            bw = a.size_bytes / elapsed
        else:
            if a.pre_state is PreState.FLUSHED:
                per_beat = params.acp.miss_per_beat_cycles
            elif a.size_bytes <= l2:
                per_beat = params.acp.hit_per_beat_cycles
            else:
                continue
            bw = a.size_bytes / (beats * (1.0 + per_beat) / freq)
        worst = max(worst, abs(bw - a.bandwidth_Bps) / a.bandwidth_Bps)
    return worst


_CALIB_KEYS = {
    "hp_startup_cycles": ("hp", "startup_cycles"),
    "hpc_startup_cycles": ("hpc", "startup_cycles"),
    "hpc_snoop_per_beat_cycles": ("hpc", "snoop_per_beat_cycles"),
    "hpc_cached_tx_per_byte_penalty_s": ("hpc", "cached_tx_per_byte_penalty_s"),
    "hpc_rx_derate": ("hpc", "rx_derate"),
    "acp_hit_per_beat_cycles": ("acp", "hit_per_beat_cycles"),
    "acp_miss_per_beat_cycles": ("acp", "miss_per_beat_cycles"),
}


def load_calibration_params(path: str) -> CalibrationParams:
    """Read the optional ``[calibration]`` section of a config file."""
    parser = _read_ini(path)
    defaults = CalibrationParams()
    if not parser.has_section("calibration"):
        return defaults
    groups = {"hp": dict(startup_cycles=defaults.hp.startup_cycles),
              "hpc": dict(startup_cycles=defaults.hpc.startup_cycles,
                          snoop_per_beat_cycles=defaults.hpc.snoop_per_beat_cycles,
                          cached_tx_per_byte_penalty_s=defaults.hpc.cached_tx_per_byte_penalty_s,
                          rx_derate=defaults.hpc.rx_derate),
              "acp": dict(hit_per_beat_cycles=defaults.acp.hit_per_beat_cycles,
                          miss_per_beat_cycles=defaults.acp.miss_per_beat_cycles)}
    for key, raw in parser.items("calibration"):
        if key not in _CALIB_KEYS:
            raise DataFileError(path, 0, f"unknown calibration key {key!r}")
        group, field = _CALIB_KEYS[key]
        try:
            groups[group][field] = float(raw)
        except ValueError as exc:
            raise DataFileError(path, 0, f"bad value for {key}: {exc}") from exc
    return CalibrationParams(
        hp=HpParams(**groups["hp"]),
        hpc=HpcParams(**groups["hpc"]),
        acp=AcpParams(**groups["acp"]),
        provenance=f"loaded from {path}",
    )


def params_to_config_text(params: CalibrationParams) -> str:
    """Render params as a ``[calibration]`` section, round-trippable."""
    lines = [
        "[calibration]",
        f"hp_startup_cycles = {params.hp.startup_cycles!r}",
        f"hpc_startup_cycles = {params.hpc.startup_cycles!r}",
        f"hpc_snoop_per_beat_cycles = {params.hpc.snoop_per_beat_cycles!r}",
        f"hpc_cached_tx_per_byte_penalty_s = {params.hpc.cached_tx_per_byte_penalty_s!r}",
        f"hpc_rx_derate = {params.hpc.rx_derate!r}",
        f"acp_hit_per_beat_cycles = {params.acp.hit_per_beat_cycles!r}",
        f"acp_miss_per_beat_cycles = {params.acp.miss_per_beat_cycles!r}",
    ]
    return "\n".join(lines) + "\n"
