"""Exception types shared across the package."""


class GradaError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(GradaError):
    """Operands have incompatible shapes for the requested operation."""


class DomainError(GradaError):
    """An operand is outside the mathematical domain of the operation."""


class DatasetFormatError(GradaError):
    """A dataset file is malformed or carries an unknown version tag."""


class ConfigError(GradaError):
    """A configuration value or key is invalid."""
