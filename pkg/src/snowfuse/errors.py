"""Exception types shared across the pipeline.

Everything derives from SnowfuseError so the CLI can map failures onto
exit codes without enumerating modules. Parse errors carry enough context
to name the offending file and field.
"""


class SnowfuseError(Exception):
    """Base class for all pipeline errors."""


class DimensionError(SnowfuseError, ValueError):
    """Array or grid dimensions are inconsistent with the operation."""


class GridCompatibilityError(SnowfuseError, ValueError):
    """Two rasters do not share the same grid geometry."""


class ShapeError(SnowfuseError, ValueError):
    """Tensor shapes are incompatible; message names both shapes."""


class RasterParseError(SnowfuseError, ValueError):
    """A raster file failed structural validation; message names the field."""


class CheckpointParseError(SnowfuseError, ValueError):
    """A checkpoint file failed structural validation."""


class DataError(SnowfuseError, ValueError):
    """Tabular input failed validation (bad value, missing required field)."""


class WeatherGapError(DataError):
    """A weather window is missing whole days; lists the missing dates."""

    def __init__(self, missing_dates, message=None):
        self.missing_dates = tuple(missing_dates)
        if message is None:
            listed = ", ".join(d.isoformat() for d in self.missing_dates)
            message = f"weather window has {len(self.missing_dates)} missing day(s): {listed}"
        super().__init__(message)


class UnassignedYearError(SnowfuseError, ValueError):
    """A sample's year is not covered by the split rule."""


class EmptyEvaluationError(SnowfuseError, ValueError):
    """No jointly valid cells were available to score."""


class StationDataError(SnowfuseError, ValueError):
    """Station records are unusable (none reporting on the requested date)."""


class ConfigError(SnowfuseError, ValueError):
    """Unknown or malformed configuration key/value."""


class DivergenceError(SnowfuseError, ArithmeticError):
    """Training produced a non-finite loss; message names the step."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")
