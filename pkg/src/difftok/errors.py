"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is missing, out of range, or inconsistent."""


class DomainError(ValueError):
    """A time argument lies outside a schedule's domain."""


class SingularityError(ArithmeticError):
    """An inversion or division hit a (near-)singular coefficient."""


class ScheduleInfeasibleError(ConfigError):
    """A step plan cannot be realized (negative counts, time underflow, ...)."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


class CorruptStreamError(ValueError):
    """A serialized token stream failed structural validation.

    ``offset`` is the byte position of the first offending byte when it
    is known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VerificationError(RuntimeError):
    """A numerical verification command did not meet its tolerance."""
