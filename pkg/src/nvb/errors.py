"""Exception hierarchy shared across the package."""


class NvbError(ValueError):
    """Base class for all package-specific errors."""


class InvalidInputError(NvbError):
    """Malformed or inconsistent inputs (bad shapes, negative masses, ...)."""


class DomainError(NvbError):
    """Argument outside the mathematical domain of an operation."""


class RangeError(NvbError):
    """Target value outside the achievable range of a monotone map."""


class SizeError(NvbError):
    """Problem too large for an exact/enumerative code path."""


class ParseError(NvbError):
    """File could not be parsed; carries the offending line when known."""

    def __init__(self, message, path=None, line=None):
        anchor = ""
        if path is not None:
            anchor = f"{path}:"
            if line is not None:
                anchor += f"{line}:"
            anchor += " "
        super().__init__(anchor + message)
        self.path = path
        self.line = line
