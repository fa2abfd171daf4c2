"""Hamiltonian vector fields on the sphere, sampled along a pole-to-pole
spiral and modeled with a from-scratch next-token transformer."""

from .dataset import (
    DatasetManifest,
    EncodedField,
    TokenQuantizer,
    build_dataset,
    encode_corpus,
    generate_corpus,
    harmonic_indices,
    normalize_field,
    read_dataset,
    split_corpus,
    split_indices,
    token_matrix,
    write_dataset,
)
from .estimator import SpiralSequenceModel
from .fields import (
    FieldSequence,
    HamiltonianField,
    TangentSample,
    energy_drift,
    evaluate_on_spiral,
    hamiltonian_components,
)
from .fileio import ChecksumError, FileFormatError, TruncatedFileError, VersionMismatchError
from .geometry import (
    HarmonicIndex,
    SphericalPoint,
    SpiralCurve,
    harmonic_gradient,
    legendre_pnm,
    real_spherical_harmonic,
    spiral_point,
    spiral_sample,
)
from .model import (
    Checkpoint,
    ForwardTrace,
    ModelParams,
    StaleTraceError,
    TransformerConfig,
    backward,
    causal_mask,
    forward,
    generate,
    init_params,
    load_checkpoint,
    positional_encoding,
    save_checkpoint,
)
from .training import (
    AdamState,
    EpochMetrics,
    SearchSpace,
    TrainConfig,
    TrainResult,
    TrialResult,
    accuracy,
    evaluate,
    next_token_loss,
    optimizer_step,
    random_search,
    train,
    write_metrics_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Checkpoint",
    "ChecksumError",
    "DatasetManifest",
    "EncodedField",
    "EpochMetrics",
    "FieldSequence",
    "FileFormatError",
    "ForwardTrace",
    "HamiltonianField",
    "HarmonicIndex",
    "ModelParams",
    "SearchSpace",
    "SphericalPoint",
    "SpiralCurve",
    "SpiralSequenceModel",
    "StaleTraceError",
    "TangentSample",
    "TokenQuantizer",
    "TrainConfig",
    "TrainResult",
    "TransformerConfig",
    "TrialResult",
    "TruncatedFileError",
    "VersionMismatchError",
    "accuracy",
    "backward",
    "build_dataset",
    "causal_mask",
    "encode_corpus",
    "energy_drift",
    "evaluate",
    "evaluate_on_spiral",
    "forward",
    "generate",
    "generate_corpus",
    "hamiltonian_components",
    "harmonic_gradient",
    "harmonic_indices",
    "init_params",
    "legendre_pnm",
    "load_checkpoint",
    "next_token_loss",
    "normalize_field",
    "optimizer_step",
    "positional_encoding",
    "random_search",
    "read_dataset",
    "real_spherical_harmonic",
    "save_checkpoint",
    "spiral_point",
    "spiral_sample",
    "split_corpus",
    "split_indices",
    "token_matrix",
    "train",
    "write_dataset",
    "write_metrics_csv",
]
