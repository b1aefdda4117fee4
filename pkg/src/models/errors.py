"""
Exception types raised by the registration pipeline.

All data-level failures derive from ``ValueError`` so callers that only care
about "bad input" can keep catching ``ValueError``.
"""

from typing import Optional


class DegenerateConfigurationError(ValueError):
    """Horn alignment cannot determine a unique rotation (too few or collinear points)."""


class NoModelError(ValueError):
    """The robust estimator could not produce any model."""


class EmptyBatchError(ValueError):
    """A pseudo-label produced no positive pairs within the inlier bound."""


class TrainingDivergedError(ValueError):
    """The student loss became non-finite."""


class PlyParseError(ValueError):
    """Malformed PLY input."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class ConfigError(ValueError):
    """Invalid configuration value or unknown key."""

    def __init__(self, key: str, message: str):
        self.key = key
        self.message = message
        super().__init__(f"{key}: {message}")


class ManifestError(ValueError):
    """Malformed or inconsistent dataset manifest."""


class GroundTruthAccessError(RuntimeError):
    """A ground-truth transform was read outside an evaluation path."""
