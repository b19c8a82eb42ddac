"""Implicit finite-difference solver and estimate audits for power-law cross-diffusion systems."""

from crossdiff.grid import Grid
from crossdiff.inversion import InversionConfig, InversionError, invert
from crossdiff.stepper import SchemeConfig, StepFailure, StepReport, Trajectory, run, step
from crossdiff.system import (
    CrossDiffusionSystem,
    Entropy,
    PowerLawParams,
    check_hypotheses,
    entropy_admissible,
)

__version__ = "0.1.0"

__all__ = [
    "CrossDiffusionSystem",
    "Entropy",
    "Grid",
    "InversionConfig",
    "InversionError",
    "PowerLawParams",
    "SchemeConfig",
    "StepFailure",
    "StepReport",
    "Trajectory",
    "check_hypotheses",
    "entropy_admissible",
    "invert",
    "run",
    "step",
]
