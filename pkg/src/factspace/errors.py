"""Exception types shared across the package."""


class FactspaceError(Exception):
    """Base class for all package-specific errors."""


class MalformedFact(FactspaceError):
    """Fact text or components violate the subject/predicate/object rules."""


class DatasetError(FactspaceError):
    """Dataset or word-table file is structurally broken (header, JSON, fields)."""


class BadFeatureDim(FactspaceError):
    """Feature vector length disagrees with the declared dimension."""


class DuplicatePair(FactspaceError):
    """The same (image_id, fact) pair appears more than once."""


class BadVectorDim(FactspaceError):
    """Word-vector rows have inconsistent lengths."""


class EmptyTable(FactspaceError):
    """Word-table file contains no vectors."""


class UnknownComponent(FactspaceError):
    """No token of a fact component exists in the word table."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = tuple(missing)


class ShapeError(FactspaceError):
    """Array widths are incompatible with the declared layout."""


class MaskMismatch(FactspaceError):
    """Two embeddings that must share a wildcard mask do not."""


class DivergenceError(FactspaceError):
    """Training loss became non-finite."""

    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration


class EmptyIndex(FactspaceError):
    """No embeddings remain after applying the index scope filter."""


class UndefinedMetric(FactspaceError):
    """A metric has no defined value for the given inputs."""


class SingularCovariance(FactspaceError):
    """An unregularized view covariance is rank deficient."""


class InfeasibleSpec(FactspaceError):
    """A synthetic-data spec requests more facts than the vocabulary allows."""


class ValidationError(FactspaceError):
    """Generic invalid argument or configuration."""
