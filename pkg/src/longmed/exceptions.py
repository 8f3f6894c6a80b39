"""Exception hierarchy for longmed.

Two branches matter operationally: ``DataError`` covers problems with the
input data or its declared schema (the CLI exits with status 2), while
``NumericalError`` covers estimation failures such as non-convergence or
separation (the CLI exits with status 3).
"""


class LongmedError(Exception):
    """Base class for all errors raised by this package."""


class DataError(LongmedError):
    """Invalid input data or schema. Mapped to CLI exit code 2."""


class NumericalError(LongmedError):
    """Estimation or linear-algebra failure. Mapped to CLI exit code 3."""


class MissingColumnError(DataError):
    """A column required by the schema is absent from the data."""


class MissingValueError(DataError):
    """A modeled column contains NaN or missing entries."""


class NonBinaryExposureError(DataError):
    """The exposure column contains values other than 0 and 1."""


class OutOfRangeCategoryError(DataError):
    """A categorical column contains a code outside its declared range."""


class EmptyCategoryError(DataError):
    """A declared category level never occurs in the data."""


class SchemaMismatchError(DataError):
    """New data is inconsistent with the schema frozen at fit time."""


class WeightMissingError(DataError):
    """A row scheduled for weighted fitting carries no weight."""


class UnsortedClustersError(DataError):
    """Cluster ids are not contiguous, so robust variance grouping is ambiguous."""


class MissingTermError(DataError):
    """A model formula references a variable the data does not provide."""


class InvalidModelError(DataError):
    """A structural model description is malformed or inconsistent."""


class StateSpaceTooLargeError(DataError):
    """Exact enumeration was requested but the discrete state space is too big."""


class NonDiscreteError(DataError):
    """Exact enumeration was requested for a non-discrete variable."""


class NotConvergedError(NumericalError):
    """An iterative fit hit its iteration cap before meeting tolerance."""


class SeparationError(NumericalError):
    """Fitted probabilities collapsed to 0/1, indicating complete separation."""


class RankDeficientError(NumericalError):
    """The design matrix does not have full column rank."""


class PositivityViolationError(NumericalError):
    """An exposure or mediator probability needed for weighting is zero."""


class DegenerateTotalEffectError(NumericalError):
    """Proportion mediated is undefined because the total effect is zero."""


class NonPsdCovarianceError(NumericalError):
    """A covariance matrix is not positive semi-definite."""
