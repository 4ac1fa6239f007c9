"""Exception types shared across the package."""


class ThinwallError(Exception):
    """Base class for all package errors."""


class InvalidDomainError(ThinwallError, ValueError):
    pass


class StaleFieldError(ThinwallError, ValueError):
    """A field or operator was used with a mesh it was not computed on."""


class TransferError(ThinwallError):
    pass


class InvalidFieldError(ThinwallError, ValueError):
    pass


class InvalidSpecError(ThinwallError, ValueError):
    pass


class AssemblyError(ThinwallError):
    """The assembled system is not positive definite."""


class ConvergenceError(ThinwallError):
    pass


class ConfigError(ThinwallError, ValueError):
    """Config parse or validation failure.

    ``line`` is set for parse errors, ``invariant`` for validation errors.
    """

    def __init__(self, message, line=None, invariant=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.invariant = invariant
