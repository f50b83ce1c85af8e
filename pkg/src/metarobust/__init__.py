"""Support-set sensitivity toolkit for few-shot meta-learners.

Trains small episodic feature extractors on synthetic Gaussian-cluster
universes, searches for worst/best-case support sets with a greedy
coordinate scheme, runs support-adversarial meta-training and checks the
two-point max-margin bound for Gaussian discriminant models.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    ConsistencyError,
    DegenerateInputError,
    NumericError,
    ParseError,
    SearchError,
    TrainingError,
    UsageError,
)

__all__ = [
    "__version__",
    "ConfigurationError",
    "ConsistencyError",
    "DegenerateInputError",
    "NumericError",
    "ParseError",
    "SearchError",
    "TrainingError",
    "UsageError",
]
