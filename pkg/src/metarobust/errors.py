"""Exception hierarchy shared by all modules."""


class MetaRobustError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(MetaRobustError, ValueError):
    """Invalid sizes, splits or search/training settings."""


class ParseError(MetaRobustError, ValueError):
    """Malformed dataset or checkpoint file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConsistencyError(MetaRobustError, ValueError):
    """File contents disagree with their own header/manifest."""


class UsageError(MetaRobustError, RuntimeError):
    """API misuse, e.g. a backward pass with a stale cache."""


class TrainingError(MetaRobustError, FloatingPointError):
    """Non-finite loss or gradient during training."""


class NumericError(MetaRobustError, ArithmeticError):
    """Ill-conditioned linear system."""


class SearchError(MetaRobustError, RuntimeError):
    """Score callable misbehaved during support search."""


class DegenerateInputError(MetaRobustError, ValueError):
    """Coincident points, zero normals and similar degenerate geometry."""
