"""Neural additive seizure detection with micro-tree distillation and
back-propagation-free test-time adaptation."""

from mtnam.errors import (
    ConfigError,
    FormatError,
    MissingInputError,
    MtnamError,
    TrainingDivergedError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FormatError",
    "MissingInputError",
    "MtnamError",
    "TrainingDivergedError",
    "__version__",
]
