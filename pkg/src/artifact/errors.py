"""Exception hierarchy.

Two families matter to callers: ``ValidationError`` for bad inputs and
``NumericalError`` for computations that could not meet their tolerance.
The CLI maps them to exit codes 2 and 3.
"""


class ArtifactError(Exception):
    pass


class ValidationError(ArtifactError, ValueError):
    pass


class NumericalError(ArtifactError, ArithmeticError):
    pass


class DimensionMismatch(ValidationError):
    pass


class OutOfDomain(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class NotSPD(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class NonPositiveVolume(ValidationError):
    pass


class NonConvergent(NumericalError):
    pass


class SpectrumOnCut(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class NonFinite(NumericalError):
    pass


class UnstableDrift(NumericalError):
    pass


class DegenerateRegressor(NumericalError):
    pass


class NoImprovement(NumericalError):
    pass
