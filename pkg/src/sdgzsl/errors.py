"""Exception hierarchy shared across the package."""


class SDGZSLError(Exception):
    """Base class for all package errors."""


class ShapeError(SDGZSLError, ValueError):
    pass


class NumericError(SDGZSLError, FloatingPointError):
    """A non-finite value appeared in a forward or backward pass."""


class ContractError(SDGZSLError, RuntimeError):
    pass


class ConfigError(SDGZSLError, ValueError):
    pass


class DataError(SDGZSLError, ValueError):
    pass


class ValidationError(DataError):
    """A DatasetBundle invariant does not hold; the message names the rule."""

    def __init__(self, rule: str, detail: str = ""):
        self.rule = rule
        super().__init__(f"{rule}: {detail}" if detail else rule)


class FormatError(SDGZSLError, IOError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
