"""Exception hierarchy.

Every error raised by the package derives from :class:`HVACRLError`. The
three intermediate classes map onto CLI exit codes: configuration problems
exit 2, file-system problems exit 3, everything else raised while running an
experiment exits 4.
"""


class HVACRLError(Exception):
    """Base class for all package errors."""


class ConfigError(HVACRLError, ValueError):
    """Invalid user input: bad config value, out-of-range argument."""


class IoFailure(HVACRLError, OSError):
    """A file could not be read or written."""


class RuntimeFailure(HVACRLError, RuntimeError):
    """An experiment could not proceed."""


# weather
class WeatherError(ConfigError):
    pass


class TooFewHeaderLines(WeatherError):
    pass


class RowFieldCountBelow22(WeatherError):
    def __init__(self, row, n_fields):
        super().__init__(f"EPW data row {row} has {n_fields} fields, expected at least 22")
        self.row = row
        self.n_fields = n_fields


class NonNumericField(WeatherError):
    def __init__(self, row, col, value):
        super().__init__(f"EPW data row {row}, column {col}: {value!r} is not numeric")
        self.row = row
        self.col = col


class TimeOutOfRange(WeatherError):
    pass


class DegenerateSplit(WeatherError):
    pass


class HoursTooSmall(WeatherError):
    pass


# thermal
class ZoneCountMismatch(ConfigError):
    pass


class NonPositiveDt(ConfigError):
    pass


# env
class EmptyWeather(ConfigError):
    pass


class ActionOutOfRange(ConfigError, IndexError):
    pass


class EpisodeFinished(RuntimeFailure):
    pass


class EnvGroupMissing(ConfigError):
    pass


# agents
class SpecMismatch(ConfigError):
    pass


class StateSpaceTooLarge(RuntimeFailure, MemoryError):
    pass


class MemoryCapExceeded(RuntimeFailure, MemoryError):
    pass


class DimensionMismatch(ConfigError):
    pass


class BufferTooSmall(RuntimeFailure):
    pass
