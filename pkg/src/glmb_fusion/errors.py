"""Exception hierarchy shared across the package."""


class GlmbError(Exception):
    """Base class for all package errors."""


class InvalidArgument(GlmbError, ValueError):
    pass


class InvalidModel(GlmbError, ValueError):
    """A model parameter is outside the range the recursion supports."""


class InvalidState(GlmbError, ValueError):
    pass


class NumericFailure(GlmbError, ArithmeticError):
    pass


class InternalError(GlmbError, RuntimeError):
    pass


class NoSuchTrack(GlmbError, KeyError):
    pass


class TooLarge(GlmbError, ValueError):
    """Raised by the brute-force enumerators when an instance exceeds the size guard."""


class ConfigError(GlmbError, ValueError):
    pass


class InputError(GlmbError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
