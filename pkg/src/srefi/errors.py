"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""
from __future__ import annotations


class SrefiError(Exception):
    exit_code = 1


class ValidationError(SrefiError, ValueError):
    """Input or configuration does not meet a documented invariant."""

    exit_code = 2


class ManifestError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class LandmarkError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class UnknownSubjectError(SrefiError, KeyError):
    exit_code = 2

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class GeometryError(SrefiError):
    """Degenerate or inverted geometry."""


class TopologyError(GeometryError):
    pass


class LabelingError(GeometryError):
    pass


class NumericError(SrefiError, ArithmeticError):
    pass


class EmptyRegionError(SrefiError):
    pass


class MissingDataError(SrefiError):
    pass


class EvaluationError(SrefiError):
    pass


class CapacityError(SrefiError):
    exit_code = 3


class InsufficientDonorsError(CapacityError):
    pass
