"""Exception hierarchy shared by all modules."""


class AnosovError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(AnosovError, ValueError):
    pass


class DecompositionError(AnosovError, ArithmeticError):
    pass


class AmbiguityError(DecompositionError):
    """The requested decomposition is not unique (wall or repeated values)."""


class PreconditionError(AnosovError, ValueError):
    pass


class InsufficientDataError(AnosovError):
    pass


class ResourceError(AnosovError, MemoryError):
    pass


class MatrixOverflowError(AnosovError, OverflowError):
    pass


class NonFreeError(AnosovError):
    """Two distinct reduced words produced the same group element."""


class StaleCacheError(AnosovError):
    pass


class CacheFormatError(AnosovError, ValueError):
    pass


class ConfigurationError(AnosovError, ValueError):
    pass


class FitError(AnosovError):
    pass


class DegenerateMeasureError(AnosovError):
    pass


class NumericalError(AnosovError, ArithmeticError):
    pass
