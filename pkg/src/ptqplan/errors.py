"""Exception hierarchy shared by every module."""


class PlanError(Exception):
    """Base class for all errors raised by ptqplan."""


class ValidationError(PlanError, ValueError):
    """Invalid arguments, shapes or configuration (CLI exit code 1)."""


class InvalidInput(ValidationError):
    pass


class UnsupportedDimension(ValidationError):
    pass


class RankExceedsDimension(ValidationError):
    pass


class InvalidBlockSize(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class NoFeasibleConfig(ValidationError):
    pass


class EmptyActiveSet(ValidationError):
    pass


class EmptyTrace(ValidationError):
    pass


class ConfigError(ValidationError):
    """Configuration error; ``path`` names the offending field (e.g. ``config.bit_min``)."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class InfeasibleBudget(PlanError):
    """The bit budget cannot be met even at the minimum bit-width (CLI exit code 2)."""


class FormatError(PlanError):
    """Unreadable container file: bad magic, version or header (CLI exit code 3)."""


class CorruptFile(FormatError):
    """Header parsed but the payload is truncated or inconsistent."""
