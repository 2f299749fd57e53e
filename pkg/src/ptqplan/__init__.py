"""Quantization planning for linear layers: Hadamard-domain quantizers,
hierarchical SVD weight decomposition, cross-layer weight bit allocation and
per-timestep activation bit scheduling."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    CorruptFile,
    EmptyActiveSet,
    EmptyTrace,
    FormatError,
    InfeasibleBudget,
    InvalidBlockSize,
    InvalidInput,
    NoFeasibleConfig,
    PlanError,
    RankExceedsDimension,
    ShapeError,
    UnsupportedDimension,
    ValidationError,
)
from .hsvd import QuantizedWeight, hsvd_decompose
from .linalg import SvdFactors, hadamard_matrix, svd, truncated_svd
from .model import Layer, ModelBundle
from .pipeline import Plan, PlanConfig, PlanReport, plan, simulate
from .quantizer import DistortionTable, QuantizedTensor, build_distortion_table, clipped_uniform_quantize
from .vasmp import BitAllocation, LayerStats, allocate
from .vatmp import TemporalSchedule, TemporalTrace, dp_schedule
