"""Exception hierarchy shared by every module of the package."""


class DynEKFError(Exception):
    """Base class for all package errors."""


class LayoutError(DynEKFError):
    """Unknown, duplicate or inconsistent variable keys."""


class NumericError(DynEKFError):
    """Non-finite values or a matrix that cannot be factorized."""


class SingularityError(NumericError):
    """A normal matrix is rank deficient where full rank is required."""

    def __init__(self, message, rank=None, dim=None):
        super().__init__(message)
        self.rank = rank
        self.dim = dim


class MarginalizationError(NumericError):
    """The normal matrix of the marginalized block is singular."""


class ModelError(DynEKFError):
    """A model map was evaluated outside its domain."""


class AssociationError(DynEKFError):
    """A measurement refers to an entity the filter does not track."""


class StateError(DynEKFError):
    """The filter state lacks variables an operation needs."""


class MetricError(DynEKFError):
    """Estimate and ground-truth sequences cannot be compared."""
