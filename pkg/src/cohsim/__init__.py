"""Performance model and strategy advisor for I/O cache coherence paths."""

from .platform import (
    BufferPreState,
    ConfigError,
    ConsumeLatency,
    CostBreakdown,
    CpuRole,
    DataFileError,
    Direction,
    InterfacePath,
    PlatformConfig,
    PreState,
    SpecificationError,
    TransferSpec,
    WorkloadProfile,
    WritePattern,
    load_config_file,
    peak_bandwidth,
    validate_config,
)
from .cache import CacheState, WcBuffer, classify_write_stream, wc_write_stream
from .interconnect import (
    CalibrationError,
    CalibrationParams,
    TransferResult,
    calibrate,
    prepare_pre_state,
    simulate_transfer,
    sweep,
)
from .swcost import (
    RegionKind,
    SwCostParams,
    cpu_stage_cost,
    irregular_write_cost,
    maintenance_cost,
    memcpy_cost,
)
from .advisor import Recommendation, rank_all, recommend, total_cost
from .pipeline import Pipeline, PipelineReport, compare_assignments, run_pipeline

__version__ = "0.1.0"
