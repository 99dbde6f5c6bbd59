"""Functional model of the shared L2 cache.

The cache is set-associative with a random replacement policy driven by a
seeded generator, so every simulation is reproducible bit-for-bit from
(seed, operation sequence).  Allocation prefers invalid ways; a random
victim is drawn only when the set is full.  Set index is the classic
physical mapping ``(addr // line) % num_sets``.

Also models two write-path hardware features of the platform:

  * the write-combine buffer, which coalesces consecutive non-cacheable
    writes that land in the same aligned chunk into one memory request, and
  * the streaming-write classifier, which decides when a large regular
    write burst bypasses allocation and goes straight to memory.

There is deliberately no L1 model and no coherence protocol state machine;
snooping is a cost paid in the interconnect model, not a protocol here.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from .platform import PlatformConfig


@dataclass(frozen=True)
class EvictedLine:
    set_index: int
    tag: int
    dirty: bool


@dataclass(frozen=True)
class AccessResult:
    hit: bool
    evicted: Optional[EvictedLine] = None


@dataclass(frozen=True)
class FlushResult:
    lines_cleaned: int
    lines_invalidated: int


class CacheState:
    """Mutable L2 contents owned by exactly one simulation at a time.

    ``sets`` maps, per set, tag -> dirty flag; presence means valid.
    Counters (hits/misses/evictions/writebacks) only ever grow.
    """

    __slots__ = ("ways", "line_bytes", "num_sets", "sets", "rng",
                 "hits", "misses", "evictions", "writebacks")

    def __init__(self, config: PlatformConfig, seed: Optional[int] = None):
        self.ways = config.l2_ways
        self.line_bytes = config.l2_line_bytes
        self.num_sets = config.l2_num_sets
        self.sets: list[dict[int, bool]] = [dict() for _ in range(self.num_sets)]
        self.rng = random.Random(config.rng_seed if seed is None else seed)
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self.writebacks = 0

    # -- single access ------------------------------------------------------

    def access(self, addr: int, write: bool, allocate: bool = True) -> AccessResult:
        """One CPU- or device-side access to the line containing ``addr``."""
        line = addr // self.line_bytes
        set_index = line % self.num_sets
        tag = line // self.num_sets
        lines = self.sets[set_index]
        if tag in lines:
            self.hits += 1
            if write:
                lines[tag] = True
            return AccessResult(hit=True)
        self.misses += 1
        if not allocate:
            return AccessResult(hit=False)
        evicted = None
        if len(lines) >= self.ways:
            victim = self.rng.choice(list(lines.keys()))
            victim_dirty = lines.pop(victim)
            self.evictions += 1
            if victim_dirty:
                self.writebacks += 1
            evicted = EvictedLine(set_index, victim, victim_dirty)
        lines[tag] = write
        return AccessResult(hit=False, evicted=evicted)

    # -- bulk range operations ----------------------------------------------
    #
    # The bulk loops repeat the access logic inline: transfers routinely
    # touch hundreds of thousands of lines and the per-call overhead of
    # access() dominates otherwise.

    def populate_range(self, base: int, length: int, dirty: bool) -> None:
        """Access every line in [base, base+length) with allocation.

        dirty=True models CPU writes, dirty=False models CPU reads.
        """
        if length <= 0:
            return
        line_bytes = self.line_bytes
        num_sets = self.num_sets
        ways = self.ways
        sets = self.sets
        choice = self.rng.choice
        hits = misses = evictions = writebacks = 0
        first = base // line_bytes
        last = (base + length - 1) // line_bytes
        for line in range(first, last + 1):
            lines = sets[line % num_sets]
            tag = line // num_sets
            if tag in lines:
                hits += 1
                if dirty:
                    lines[tag] = True
                continue
            misses += 1
            if len(lines) >= ways:
                victim = choice(list(lines.keys()))
                if lines.pop(victim):
                    writebacks += 1
                evictions += 1
            lines[tag] = dirty
        self.hits += hits
        self.misses += misses
        self.evictions += evictions
        self.writebacks += writebacks

    def access_range(self, base: int, length: int, write: bool) -> tuple[int, int]:
        """Allocating access to every line in range; returns (hit, miss) counts.

        Used for the direct-cache-port transfer path, where a transfer's own
        allocations may evict lines it has yet to touch (self-eviction).
        """
        if length <= 0:
            return (0, 0)
        line_bytes = self.line_bytes
        num_sets = self.num_sets
        ways = self.ways
        sets = self.sets
        choice = self.rng.choice
        hit_lines = miss_lines = evictions = writebacks = 0
        first = base // line_bytes
        last = (base + length - 1) // line_bytes
        for line in range(first, last + 1):
            lines = sets[line % num_sets]
            tag = line // num_sets
            if tag in lines:
                hit_lines += 1
                if write:
                    lines[tag] = True
                continue
            miss_lines += 1
            if len(lines) >= ways:
                victim = choice(list(lines.keys()))
                if lines.pop(victim):
                    writebacks += 1
                evictions += 1
            lines[tag] = write
        self.hits += hit_lines
        self.misses += miss_lines
        self.evictions += evictions
        self.writebacks += writebacks
        return (hit_lines, miss_lines)

    def _range_lines(self, base: int, length: int) -> tuple[int, int]:
        first = base // self.line_bytes
        last = (base + length - 1) // self.line_bytes
        return first, last

    def _iter_resident_in_range(self, first: int, last: int):
        """Yield (set_index, tag, line) for resident lines in [first, last].

        Scans the address range when it is smaller than the cache, else
        scans the cache itself; both orders visit each line at most once.
        """
        num_sets = self.num_sets
        span = last - first + 1
        if span <= num_sets * self.ways:
            sets = self.sets
            for line in range(first, last + 1):
                set_index = line % num_sets
                tag = line // num_sets
                if tag in sets[set_index]:
                    yield set_index, tag, line
        else:
            for set_index, lines in enumerate(self.sets):
                for tag in list(lines.keys()):
                    line = tag * num_sets + set_index
                    if first <= line <= last:
                        yield set_index, tag, line

    def flush_range(self, base: int, length: int) -> FlushResult:
        """Clean and invalidate every line overlapping [base, base+length).

        Dirty lines are written back (counted as cleaned) before the line is
        dropped.  Idempotent; an empty or non-resident range is a no-op.
        """
        if length <= 0:
            return FlushResult(0, 0)
        first, last = self._range_lines(base, length)
        cleaned = invalidated = 0
        for set_index, tag, _line in list(self._iter_resident_in_range(first, last)):
            if self.sets[set_index].pop(tag):
                cleaned += 1
                self.writebacks += 1
            invalidated += 1
        return FlushResult(cleaned, invalidated)

    def invalidate_range(self, base: int, length: int) -> int:
        """Drop every line overlapping the range, discarding dirty data.

        Returns the number of lines dropped.  Writeback counter unchanged.
        """
        if length <= 0:
            return 0
        first, last = self._range_lines(base, length)
        dropped = 0
        for set_index, tag, _line in list(self._iter_resident_in_range(first, last)):
            del self.sets[set_index][tag]
            dropped += 1
        return dropped

    def invalidate_dirty_range(self, base: int, length: int) -> int:
        """Drop only dirty lines in the range (snoop-on-read semantics)."""
        if length <= 0:
            return 0
        first, last = self._range_lines(base, length)
        dropped = 0
        for set_index, tag, _line in list(self._iter_resident_in_range(first, last)):
            if self.sets[set_index][tag]:
                del self.sets[set_index][tag]
                dropped += 1
        return dropped

    def resident_lines(self, base: int, length: int) -> int:
        if length <= 0:
            return 0
        first, last = self._range_lines(base, length)
        return sum(1 for _ in self._iter_resident_in_range(first, last))

    def dirty_resident_bytes(self, base: int, length: int) -> int:
        if length <= 0:
            return 0
        first, last = self._range_lines(base, length)
        dirty = 0
        for set_index, tag, _line in self._iter_resident_in_range(first, last):
            if self.sets[set_index][tag]:
                dirty += 1
        return dirty * self.line_bytes

    def resident_fraction(self, base: int, length: int) -> float:
        """Valid lines overlapping the range over total lines spanned."""
        if length <= 0:
            raise ValueError("resident_fraction requires a non-empty range")
        first, last = self._range_lines(base, length)
        spanned = last - first + 1
        return self.resident_lines(base, length) / spanned

    def valid_line_count(self) -> int:
        return sum(len(lines) for lines in self.sets)

    def snapshot(self) -> tuple:
        """Hashable view of the full cache contents, for determinism checks."""
        return tuple(tuple(sorted(lines.items())) for lines in self.sets)


# --- write-combine buffer ---------------------------------------------------


class WcBuffer:
    """Single coalescing buffer for non-cacheable writes.

    Holds at most one chunk (``chunk_bytes`` wide, aligned).  A write to a
    different chunk emits the current one.  Coalescing conserves bytes: the
    sum of emitted request payloads always equals the bytes written.
    """

    def __init__(self, chunk_bytes: int):
        if chunk_bytes <= 0:
            raise ValueError("chunk_bytes must be positive")
        self.chunk_bytes = chunk_bytes
        self.chunk_addr: Optional[int] = None
        self.fill_mask = 0  # bit i set = byte i of the chunk is pending
        self._pending_bytes = 0
        self.emitted_requests = 0
        self.emitted_bytes = 0

    def write(self, addr: int, size: int) -> None:
        if size <= 0:
            raise ValueError("write size must be positive")
        if size > self.chunk_bytes:
            raise ValueError("write larger than a chunk; split it first")
        chunk = (addr // self.chunk_bytes) * self.chunk_bytes
        if addr + size > chunk + self.chunk_bytes:
            raise ValueError("write straddles a chunk boundary; split it first")
        if self.chunk_addr is not None and chunk != self.chunk_addr:
            self.drain()
        self.chunk_addr = chunk
        offset = addr - chunk
        self.fill_mask |= ((1 << size) - 1) << offset
        self._pending_bytes += size

    def drain(self) -> None:
        """Emit the pending chunk, if any."""
        if self.chunk_addr is None:
            return
        self.emitted_requests += 1
        self.emitted_bytes += self._pending_bytes
        self.chunk_addr = None
        self.fill_mask = 0
        self._pending_bytes = 0


@dataclass(frozen=True)
class WcStreamResult:
    emitted_requests: int
    emitted_bytes: int


def wc_write_stream(writes: Iterable[tuple[int, int]],
                    chunk_bytes: int = 16) -> WcStreamResult:
    """Run a write stream through a fresh write-combine buffer.

    ``writes`` is a sequence of (addr, size) with each write contained in a
    single aligned chunk.  Consecutive writes to the same chunk coalesce
    into one emitted request; any change of chunk drains the buffer.
    """
    buf = WcBuffer(chunk_bytes)
    for addr, size in writes:
        buf.write(addr, size)
    buf.drain()
    return WcStreamResult(buf.emitted_requests, buf.emitted_bytes)


# --- streaming-write (allocation bypass) classifier -------------------------


class WriteStreamDecision(Enum):
    ALLOCATE_LINES = "allocate_lines"
    BYPASS_TO_MEMORY = "bypass_to_memory"


@dataclass(frozen=True)
class WriteStreamSummary:
    """Shape summary of a write burst, as the hardware heuristic sees it."""

    sequential_run_bytes: int
    total_bytes: int
    write_only: bool = True

    def __post_init__(self):
        if not 0 <= self.sequential_run_bytes <= self.total_bytes:
            raise ValueError("need 0 <= sequential_run_bytes <= total_bytes")


def classify_write_stream(summary: WriteStreamSummary,
                          config: PlatformConfig) -> WriteStreamDecision:
    """Decide whether a write burst allocates lines or streams to memory.

    Bypass triggers only for write-only streams whose sequential run length
    reaches the configured threshold (default: four cache lines).  The
    decision is deterministic in the summary and the config.
    """
    if (summary.write_only
            and summary.sequential_run_bytes >= config.bypass_threshold_bytes):
        return WriteStreamDecision.BYPASS_TO_MEMORY
    return WriteStreamDecision.ALLOCATE_LINES
