"""Shared exception types, grouped by the exit-code class they map to."""


class ConfigError(ValueError):
    """Invalid configuration or arguments (CLI exit code 2)."""


class DataError(ValueError):
    """Invalid or inconsistent data on disk or in memory (CLI exit code 3)."""


class NumericalError(RuntimeError):
    """Numerical failure during simulation, fitting, or forecasting (CLI exit code 4)."""


class ForecastDivergence(NumericalError):
    """A closed-loop forecast produced a non-finite value.

    Attributes
    ----------
    step : int
        Time-step index at which the first non-finite prediction appeared.
    channel : str or None
        Produced channel, when known.
    """

    def __init__(self, step: int, channel: str | None = None):
        self.step = int(step)
        self.channel = channel
        where = f" for channel '{channel}'" if channel else ""
        super().__init__(f"non-finite forecast at step {self.step}{where}")


class CalibrationError(NumericalError):
    """Envelope calibration could not match the requested targets."""
