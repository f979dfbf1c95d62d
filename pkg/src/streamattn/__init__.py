"""One-pass, sublinear-space streaming approximation of softmax attention.

The engine reads V, K, Q (or X2, X1 with stored weights) row by row exactly
once, keeps only sketch state whose size is independent of the stream
length, and decodes each output column as a 2k-sparse vector whose distance
to the exact attention column is bounded by the best-k-sparse tail plus the
configured accuracy slack.
"""

from .core import (
    MatFormatError,
    ProblemParams,
    ensure_matrix,
    mat_load,
    mat_store,
    spectral_norm_upper,
)
from .engine import (
    AttentionOutput,
    CrossWeights,
    Phase,
    PhaseError,
    SketchDims,
    StreamEngine,
    derive_dims,
    stream_attention,
    stream_cross_attention,
)
from .features import FeatureConfig, build_feature_row, default_degree, kernel_error_bound
from .oracle import (
    ErrorReport,
    MemoryReport,
    OracleResult,
    evaluate,
    exact_attention,
    gen_instance,
    memory_audit,
    tail_norm,
)
from .recovery import (
    Measurement,
    RecoverySketch,
    SparseColumn,
    decode_topk,
    encode_update,
    encode_vector,
    recovery_dims,
)
from .sketch import (
    AmsSketcher,
    GaussianSketcher,
    HashFamily4,
    SketchAccumulator,
    accumulate_rank_one,
    jl_dim,
    sketch_column,
)

__version__ = "0.1.0"

__all__ = [
    "AmsSketcher",
    "AttentionOutput",
    "CrossWeights",
    "ErrorReport",
    "FeatureConfig",
    "GaussianSketcher",
    "HashFamily4",
    "MatFormatError",
    "Measurement",
    "MemoryReport",
    "OracleResult",
    "Phase",
    "PhaseError",
    "ProblemParams",
    "RecoverySketch",
    "SketchAccumulator",
    "SketchDims",
    "SparseColumn",
    "StreamEngine",
    "accumulate_rank_one",
    "build_feature_row",
    "decode_topk",
    "default_degree",
    "derive_dims",
    "encode_update",
    "encode_vector",
    "ensure_matrix",
    "evaluate",
    "exact_attention",
    "gen_instance",
    "jl_dim",
    "kernel_error_bound",
    "mat_load",
    "mat_store",
    "memory_audit",
    "recovery_dims",
    "sketch_column",
    "spectral_norm_upper",
    "stream_attention",
    "stream_cross_attention",
    "tail_norm",
]
