"""Exception hierarchy shared across the package."""


class CoupledCDError(Exception):
    """Base class for every error raised by this package."""


class FormatError(CoupledCDError):
    """A file does not conform to the RIMG or PGM layout."""


class DataError(CoupledCDError):
    """Stored values are unusable (NaN/Inf, negative SAR intensities...)."""


class DegenerateError(CoupledCDError):
    pass


class GeometryError(CoupledCDError, ValueError):
    """Incompatible image, grid or patch dimensions."""


class ParamError(CoupledCDError, ValueError):
    pass


class DomainError(CoupledCDError, ValueError):
    """Argument outside the domain of a divergence or sensor model."""


class InvariantError(CoupledCDError):
    """A solver state violates one of its constraint sets."""


class InitError(CoupledCDError):
    pass


class NumericalError(CoupledCDError, ArithmeticError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class EvalError(CoupledCDError, ValueError):
    pass
