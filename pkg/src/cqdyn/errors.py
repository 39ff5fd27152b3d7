"""Exception types shared across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration: bad family parameters, inadmissible operators,
    malformed simulation settings.  Raised before any computation starts."""


class SupportError(RuntimeError):
    """A state left the support of the measure function (g -> 0), so the
    back-reaction force and renormalisation are undefined."""

    def __init__(self, message: str, time: float | None = None, trajectory: int | None = None):
        super().__init__(message)
        self.time = time
        self.trajectory = trajectory


class NonFiniteError(RuntimeError):
    """Integration produced NaN/Inf values (step-size failure)."""

    def __init__(self, message: str, time: float | None = None, trajectory: int | None = None):
        super().__init__(message)
        self.time = time
        self.trajectory = trajectory


class InconclusiveRunError(RuntimeError):
    """A statistical driver could not reach a verdict (e.g. too few collapsed
    trajectories within the simulated horizon)."""
