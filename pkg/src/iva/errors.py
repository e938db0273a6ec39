"""Exception types shared across the package."""


class IvaError(Exception):
    """Base class for all package errors."""


class DimensionError(IvaError, ValueError):
    pass


class DomainError(IvaError, ValueError):
    pass


class StateError(IvaError, RuntimeError):
    pass


class FormatError(IvaError, ValueError):
    """Malformed or truncated on-disk data.  ``offset`` is the byte position."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CapacityError(IvaError, ValueError):
    pass


class ContractError(IvaError, ValueError):
    pass


class ConfigError(IvaError, ValueError):
    pass


class NumericError(IvaError, ArithmeticError):
    pass
