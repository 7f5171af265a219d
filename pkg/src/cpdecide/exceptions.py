"""Exception types raised across the package.

Every error is a ``ValueError`` subclass so callers that only care about
"bad input" can catch one type.
"""


class CPDecideError(ValueError):
    """Base class for all package errors."""


class AllZeroError(CPDecideError):
    pass


class NegativeWeightError(CPDecideError):
    pass


class ZeroMarginalError(CPDecideError):
    """Conditioning on a signal value that has zero probability."""


class DomainMismatchError(CPDecideError):
    pass


class NonPositiveTauError(CPDecideError):
    pass


class DegenerateLabelsError(CPDecideError):
    pass


class EmptyTrainError(CPDecideError):
    pass


class EmptyEvalError(CPDecideError):
    pass


class EmptyRecordsError(CPDecideError):
    pass


class LabelOutOfRangeError(CPDecideError):
    pass


class MissingUniformError(CPDecideError):
    pass


class EmptyScoresError(CPDecideError):
    pass


class AlphaOutOfRangeError(CPDecideError):
    pass


class LengthMismatchError(CPDecideError):
    pass


class EmptyInputError(CPDecideError):
    pass


class DimensionMismatchError(CPDecideError):
    pass


class SignalMismatchError(CPDecideError):
    """Strategy needs a signal the pipeline does not emit."""


class EmptyTestError(SignalMismatchError):
    pass


class ZeroPriorEntryError(CPDecideError):
    pass


class EmptySetError(CPDecideError):
    pass


class ConfigInvalidError(CPDecideError):
    pass


class NotFittedError(CPDecideError, AttributeError):
    pass
