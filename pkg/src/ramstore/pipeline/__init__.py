"""Multi-stage synthetic pipelines with byte-exact I/O ledgers."""

from .backends import CentralBackend, TransientBackend, make_backend
from .model import (
    BackendRef,
    IoLedger,
    LedgerRow,
    PipelineReport,
    PipelineSpec,
    StageSpec,
    io_overhead_reduction,
    make_baseline_spec,
    make_transient_spec,
    time_reduction,
)
from .presets import (
    REFERENCE_TOTAL_MINUTES,
    make_preset_spec,
    paper_scaled_sizes,
)
from .runner import inline_plan, run_pipeline, run_with_inline_cluster, transient_pools

__all__ = [
    "BackendRef",
    "CentralBackend",
    "IoLedger",
    "LedgerRow",
    "PipelineReport",
    "PipelineSpec",
    "REFERENCE_TOTAL_MINUTES",
    "StageSpec",
    "TransientBackend",
    "inline_plan",
    "io_overhead_reduction",
    "make_backend",
    "make_baseline_spec",
    "make_preset_spec",
    "make_transient_spec",
    "paper_scaled_sizes",
    "run_pipeline",
    "run_with_inline_cluster",
    "time_reduction",
    "transient_pools",
]
