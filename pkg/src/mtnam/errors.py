class MtnamError(Exception):
    """Base class for errors raised by this package."""


class FormatError(MtnamError, ValueError):
    """Malformed input file or inconsistent data."""


class ConfigError(MtnamError, ValueError):
    pass


class MissingInputError(MtnamError, FileNotFoundError):
    pass


class TrainingDivergedError(MtnamError, ArithmeticError):
    """Loss became non-finite during training."""
