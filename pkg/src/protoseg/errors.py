"""Exception types shared across the engine.

Argument misuse (wrong shapes, out-of-range scalars) raises plain
ValueError; the classes below mark conditions a caller may want to
catch and handle per-record, e.g. skipping a degenerate noun while a
batch build keeps going.
"""


class ProtosegError(Exception):
    """Base class for all engine-specific errors."""


class TensorFormatError(ProtosegError):
    """File is not a decodable FDT1 tensor (bad magic, header, dtype)."""


class TensorTruncationError(TensorFormatError):
    """Payload shorter or longer than the header's dims demand."""


class TensorDataError(ProtosegError):
    """Tensor decodes but carries NaN/Inf values."""


class ManifestError(ProtosegError):
    """Manifest record is malformed or references missing/invalid files."""


class DegenerateMapError(ProtosegError):
    """Attribution map is constant; min-max normalization is undefined."""


class EmptyRegionError(ProtosegError):
    """Pooling weights sum to zero; no features to aggregate."""


class IndexBuildError(ProtosegError):
    """Prototype index cannot be built (e.g. zero-norm key vector)."""


class IndexStateError(ProtosegError):
    """Operation requires index state that is absent (e.g. no HNSW graph)."""


class IndexLoadError(ProtosegError):
    """Serialized index is truncated, corrupt, or version-incompatible."""


class WindowPlanError(ProtosegError):
    """Sliding-window plan does not cover the image or mismatches the grids."""


class PipelineStageError(ProtosegError):
    """Wraps a failure inside the segmentation pipeline with its stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


class UndefinedMetricError(ProtosegError):
    """Metric has no defined value (e.g. mIoU with no scored classes)."""
