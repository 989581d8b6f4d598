"""Batch-effect correction by adaptive affinity-row sampling and sparse smoothing."""

from .core import (
    BatchLabels,
    ClusterLabels,
    HyperParams,
    ProfileMatrix,
    SparseAffinityRows,
    read_profile_csv,
    write_profile_csv,
)
from .errors import BatchSmoothError, NumericError, ValidationError
from .kernel import AffinityKernel, batch_local_scales, elbow_sparsify
from .metrics import MetricConfig, MetricReport, evaluate
from .pipeline import CorrectionResult, correct
from .preprocess import ControlMask, PreprocessConfig, preprocess
from .sampler import CoverageState, run_adaptive, run_sampling
from .smoother import nystrom_exact, row_normalize, smooth
from .synthetic import BlockModelSpec, GmmSpec, generate_block_affinity, generate_gmm

__version__ = "0.1.0"

__all__ = [
    "AffinityKernel",
    "BatchLabels",
    "BatchSmoothError",
    "BlockModelSpec",
    "ClusterLabels",
    "ControlMask",
    "CorrectionResult",
    "CoverageState",
    "GmmSpec",
    "HyperParams",
    "MetricConfig",
    "MetricReport",
    "NumericError",
    "PreprocessConfig",
    "ProfileMatrix",
    "SparseAffinityRows",
    "ValidationError",
    "batch_local_scales",
    "correct",
    "elbow_sparsify",
    "evaluate",
    "generate_block_affinity",
    "generate_gmm",
    "nystrom_exact",
    "preprocess",
    "read_profile_csv",
    "row_normalize",
    "run_adaptive",
    "run_sampling",
    "smooth",
    "write_profile_csv",
]
