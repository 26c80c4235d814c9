"""Exception types shared across the package."""


class DadaError(Exception):
    """Base class for all package errors."""


class DimensionError(DadaError, ValueError):
    """Shapes or widths that do not line up."""


class DomainError(DadaError, ValueError):
    """A value outside the mathematical domain of an operation (log of 0, bad label)."""


class ConfigError(DadaError, ValueError):
    """Invalid configuration or dataset for the requested operation."""


class UsageError(DadaError, RuntimeError):
    """An API called in a state where it cannot run."""


class FormatError(DadaError, ValueError):
    """Malformed input file."""


class TrainingDiverged(DadaError, FloatingPointError):
    """Non-finite gradient encountered during an optimizer step."""
