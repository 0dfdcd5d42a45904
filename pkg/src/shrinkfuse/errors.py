"""Exception hierarchy.

Errors fall into three families that the command line maps to exit codes:
usage/configuration problems, problems with the input data, and numerical
failures of an estimator.
"""


class FusionError(Exception):
    """Base class for every error raised by this package."""


class UsageError(FusionError):
    """Bad arguments or configuration."""


class InvalidConfig(UsageError):
    pass


class DataError(FusionError):
    """The input data violates a precondition."""


class DimensionMismatch(DataError):
    pass


class InvalidDimension(DataError):
    pass


class MissingColumn(DataError):
    pass


class NonBinaryResponse(DataError):
    pass


class EmptyAfterFiltering(DataError):
    pass


class RankDeficient(DataError):
    pass


class FoldTooSmall(DataError):
    pass


class MissingBaseline(DataError):
    pass


class NumericalError(FusionError):
    """An estimator could not produce a finite answer."""


class Separation(NumericalError):
    pass


class NotConverged(NumericalError):
    pass


class NonPositiveDefinite(NumericalError):
    pass


class DegenerateStatistic(NumericalError):
    pass
