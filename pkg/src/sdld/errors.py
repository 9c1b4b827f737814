"""Exception types shared across the package."""


class SdldError(Exception):
    """Base class for all package-specific errors."""


class DataError(SdldError):
    """Invalid or internally inconsistent input data."""


class MissingColumnError(DataError):
    """A required column is absent from an input file."""


class MalformedValueError(DataError):
    """A cell holds a value outside its permitted domain."""


class NonMonotoneCensoringError(DataError):
    """A subject has recorded data after dropping out."""


class UnknownCovariateError(DataError):
    """A named covariate does not exist in the schema."""


class InvalidFractionsError(DataError):
    """Partition fractions are negative or do not sum to one."""


class SchemaMismatchError(DataError):
    """A covariate vector does not match the expected schema width."""


class DimensionMismatchError(SdldError, ValueError):
    """Matrix and vector dimensions disagree."""


class EstimationError(SdldError):
    """Estimation cannot be carried out on the requested subgroup."""


class EmptyRiskSetError(EstimationError):
    """No at-risk subjects are available to fit a model at some period."""

    def __init__(self, period, message=None):
        self.period = period
        super().__init__(message or f"no at-risk subjects at period {period}")


class NoFollowersError(EstimationError):
    """No uncensored subject followed the treatment regime through the horizon."""


class ZeroVarianceError(EstimationError):
    """A splitting statistic denominator is zero."""


class RootNotEstimableError(EstimationError):
    """The treatment effect cannot be estimated even in the root node."""


class EmptyValidationSetError(EstimationError):
    """Final-tree selection was handed an empty validation dataset."""
