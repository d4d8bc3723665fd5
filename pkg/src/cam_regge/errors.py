"""Exception hierarchy shared by all modules."""


class CamError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(CamError, ValueError):
    """Input files, tables or configuration violate their contract."""


class TableFormatError(ValidationError):
    """A scattering-matrix CSV could not be turned into a table."""


class ChannelClosedError(CamError):
    """Requested energy lies below the transition threshold."""


class NumericalError(CamError, ArithmeticError):
    """A numerical procedure failed (degenerate data, divergence, ...)."""


class DegenerateDataError(NumericalError):
    pass


class PoleEvaluationError(NumericalError):
    pass


class QuadratureError(NumericalError):
    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class BranchCutError(NumericalError):
    pass


class UnphysicalParameterError(NumericalError):
    pass
