"""Evaluation toolkit for gridded precipitation downscaling.

Data model (:mod:`precipeval.grid`), main-system cluster analysis
(:mod:`precipeval.cluster`), the verification metric suite
(:mod:`precipeval.metrics`), classical baselines
(:mod:`precipeval.baselines`), a seeded synthetic event generator
(:mod:`precipeval.synth`), container I/O (:mod:`precipeval.io_container`)
and the cross-validation harness (:mod:`precipeval.harness`).

The per-frame hot kernels run through a compiled extension when built,
with a numpy fallback selected at import; see :mod:`precipeval.kernels`.
"""

from .cluster import ClusterConfig, ClusterStats, label_components, main_cluster
from .grid import (
    DEFAULT_WET_THRESHOLD,
    HR_GEOMETRY,
    LR_GEOMETRY,
    FrameStats,
    GridGeometry,
    PrecipFrame,
    PrecipSequence,
    block_mean_downsample,
    frame_new,
    frame_stats,
)
from .io_container import (
    DatasetIndex,
    build_index,
    read_pair,
    read_sequences,
    write_pair,
    write_sequences,
)
from .kernels import BACKEND as KERNEL_BACKEND
from .metrics import (
    AmoTable,
    MetricConfig,
    MetricReport,
    ammd,
    cmd,
    cpmse,
    evaluate,
    hrre,
    hrts,
    mppe,
    pbias,
    pdem,
    pem,
    quantile,
    rmse,
)
from .synth import CellSpec, EventConfig, SensorConfig, SynthTruth, degrade, generate_event

__version__ = "0.1.0"

__all__ = [
    "AmoTable",
    "CellSpec",
    "ClusterConfig",
    "ClusterStats",
    "DatasetIndex",
    "DEFAULT_WET_THRESHOLD",
    "EventConfig",
    "FrameStats",
    "GridGeometry",
    "HR_GEOMETRY",
    "KERNEL_BACKEND",
    "LR_GEOMETRY",
    "MetricConfig",
    "MetricReport",
    "PrecipFrame",
    "PrecipSequence",
    "SensorConfig",
    "SynthTruth",
    "ammd",
    "block_mean_downsample",
    "build_index",
    "cmd",
    "cpmse",
    "degrade",
    "evaluate",
    "frame_new",
    "frame_stats",
    "generate_event",
    "hrre",
    "hrts",
    "label_components",
    "main_cluster",
    "mppe",
    "pbias",
    "pdem",
    "pem",
    "quantile",
    "read_pair",
    "read_sequences",
    "rmse",
    "write_pair",
    "write_sequences",
]
