"""Exception types raised by splinefit."""


class SplinefitError(Exception):
    """Base class for all library errors."""


class ConfigurationError(SplinefitError, ValueError):
    """Structurally invalid spline or optimizer configuration."""


class DomainError(SplinefitError, ValueError):
    """Parameter outside the [0, 1] spline domain."""


class InvalidInputError(SplinefitError, ValueError):
    """Empty or non-finite point data."""


class DegenerateInputError(InvalidInputError):
    """Point data that cannot be normalized (e.g. zero extent)."""


class InvalidGenomeError(SplinefitError, ValueError):
    """Leaf genome of the wrong length or outside its bounds."""


class CloudParseError(SplinefitError, ValueError):
    """Malformed point-cloud file."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class EmptyDatasetError(SplinefitError, ValueError):
    """No leaf files (or no vertices) where some were expected."""
