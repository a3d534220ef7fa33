"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """An argument or configuration value is outside its allowed range."""


class CapacityError(ValueError):
    """A rank increase would exceed ``min(n, d)`` for a site."""

    def __init__(self, site_id, message):
        super().__init__(f"{site_id}: {message}")
        self.site_id = site_id


class ScheduleError(RuntimeError):
    """The growth schedule was invoked outside its valid window."""


class NumericalError(FloatingPointError):
    """A non-finite loss or parameter appeared during training."""

    def __init__(self, message, step=None, site_id=None):
        super().__init__(message)
        self.step = step
        self.site_id = site_id
