"""Exception types shared across the package."""


class CondensationError(Exception):
    """Base class for every error raised by this package."""


class ParseError(CondensationError, ValueError):
    """Malformed input file content."""


class LabelError(CondensationError, ValueError):
    """Label set is invalid (non-contiguous, out of range, or mismatched)."""


class EmptyDatasetError(CondensationError, ValueError):
    """Dataset has no rows."""


class EmptyClassError(CondensationError, ValueError):
    """A class label has zero samples."""


class ValidationError(CondensationError, ValueError):
    """Value-level invariant violated (NaN/Inf entries, bad ranges)."""


class CapacityError(CondensationError, ValueError):
    """Requested more points than available."""


class ShapeError(CondensationError, ValueError):
    """Array dimensions incompatible with the operation."""


class DomainError(CondensationError, ValueError):
    """Argument outside the mathematical domain of the operation."""


class ConfigError(CondensationError, ValueError):
    """Invalid or inconsistent configuration."""


class ContextError(CondensationError, ValueError):
    """A regularizer or operation is missing required context."""


class ArchitectureError(CondensationError, ValueError):
    """Models have incompatible architectures."""


class DivergenceError(CondensationError, RuntimeError):
    """Optimization produced non-finite values."""


class NumericalError(CondensationError, RuntimeError):
    """A numerical routine failed to produce a finite result."""


class SolveError(CondensationError, RuntimeError):
    """A linear system could not be solved."""
