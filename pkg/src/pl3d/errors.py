"""Exception types raised across the pipeline."""


class PipelineError(Exception):
    """Base class for all pipeline failures."""


class BehindCamera(PipelineError):
    """Point has non-positive depth in the camera frame."""


class OutOfFrame(PipelineError):
    """Projected pixel falls outside [0, W) x [0, H)."""


class AllViewsFiltered(PipelineError):
    """Every view was discarded by the confidence/area filter."""


class DegenerateEmbeddings(PipelineError):
    """All view embeddings are zero vectors; no query can be formed."""


class DimensionMismatch(PipelineError):
    """Operand dimensions are incompatible."""


class EmptyPairSet(PipelineError):
    """The point-pixel correspondence set is empty."""


class NoFeaturePairs(PipelineError):
    """No correspondence entry carries a 2D feature vector."""


class ZeroVector(PipelineError):
    """A vector with norm below 1e-12 where a direction is required."""


class NonFiniteLoss(PipelineError):
    """Training produced a non-finite loss value."""


class EmptyQuerySet(PipelineError):
    """A metric was requested over zero queries."""


class CorruptHeader(PipelineError):
    """Tensor file header is malformed or has an unknown magic/version."""


class MissingFile(PipelineError):
    """A referenced file does not exist."""


class DimMismatch(PipelineError):
    """Stored tensor dimensions disagree with the payload or manifest."""
