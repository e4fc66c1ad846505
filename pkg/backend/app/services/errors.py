"""
Engine errors - every failure the tracking engine reports carries a stable code
"""
from typing import Optional


class TrackingError(ValueError):
    """Base error for the tracking engine. ``code`` is stable and machine readable."""

    code = "tracking-error"

    def __init__(self, code: Optional[str] = None, detail: str = ""):
        if code is not None:
            self.code = code
        self.detail = detail
        message = f"{self.code}: {detail}" if detail else self.code
        super().__init__(message)


class ConfigError(TrackingError):
    code = "config-invalid"


class SequenceError(TrackingError):
    code = "sequence-malformed"


class PoseError(TrackingError):
    code = "pose-error"


class AdmmDivergedError(TrackingError):
    """Raised when an ADMM iterate stops being finite"""

    code = "admm-diverged"

    def __init__(self, iteration: int, detail: str = ""):
        self.iteration = iteration
        super().__init__(None, detail or f"non-finite value at iteration {iteration}")
