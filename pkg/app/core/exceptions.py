"""
Exception hierarchy for the toolkit

Misconfiguration errors subclass ValueError, numerical failures subclass
RuntimeError, so callers can keep catching the builtin types.
"""

from typing import List, Optional


class SimulationError(Exception):
    """Base class for every toolkit error"""


class ConfigurationError(SimulationError, ValueError):
    """Experiment or model configuration is unusable"""

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        self.errors = list(errors) if errors else [message]
        super().__init__(message)


class AssumptionViolation(SimulationError, ValueError):
    """A coefficient set breaks one of the standing model assumptions"""

    def __init__(self, message: str, report: Optional[object] = None):
        self.report = report
        super().__init__(message)


class StepSizeError(SimulationError, ValueError):
    """Time step does not resolve the fast scale"""


class GridMismatchError(SimulationError, ValueError):
    """Two paths or ensembles live on incompatible grids"""


class BandResolutionError(SimulationError, ValueError):
    """Local-time band is finer than the path resolution"""


class NotPositiveSemidefinite(SimulationError, ValueError):
    """Matrix has an eigenvalue below the allowed jitter"""


class GluingViolation(SimulationError, ValueError):
    """Test function does not satisfy the interface gluing condition"""


class TailBoundError(SimulationError, RuntimeError):
    """Envelope tail cannot be pushed below tolerance"""


class DivergenceError(SimulationError, RuntimeError):
    """Deterministic trajectory left the configured bound"""


class TimeChangeError(SimulationError, RuntimeError):
    """Random clock failed to reach the horizon"""


class ExcessiveCensoring(SimulationError, RuntimeError):
    """Too many excursions hit the step cap"""


class PlotDependencyError(SimulationError, RuntimeError):
    """A figure script refers to a CSV that was not written"""
