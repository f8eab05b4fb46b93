"""Shared exception types."""


class DipmeError(Exception):
    pass


class CalibrationError(DipmeError, ValueError):
    """Calibration input cannot determine the sensor parameters."""


class ConfigError(DipmeError, ValueError):
    """Invalid or inconsistent configuration."""


class NoDipMotionError(DipmeError, ValueError):
    """Recording contains no penetration motion."""


class SceneError(DipmeError, ValueError):
    """Scene layers do not tile the box."""


class TrainingDiverged(DipmeError, RuntimeError):
    """Loss became non-finite; carries the last good parameters."""

    def __init__(self, message, last_good_params=None, history=None):
        super().__init__(message)
        self.last_good_params = last_good_params
        self.history = history
