"""Single-photon portraits: emission models plus the measurement chain that reads them out."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    ComplexTrace,
    DrivePulse,
    FilterParams,
    FitResult,
    PortraitGrid,
    QubitParams,
    angular_frequency,
    ordinary_frequency,
    trace_resample,
)

__all__ = [
    "ComplexTrace",
    "DrivePulse",
    "FilterParams",
    "FitResult",
    "PortraitGrid",
    "QubitParams",
    "angular_frequency",
    "ordinary_frequency",
    "trace_resample",
    "__version__",
]
