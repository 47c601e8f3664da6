"""Casimir forces between a sphere and a plate from dielectric models.

Submodules: :mod:`~hsm_casimir.dielectric` (permittivity on the imaginary
axis), :mod:`~hsm_casimir.lifshitz` (forces), :mod:`~hsm_casimir.calibration`
(simulated electrostatic calibration) and :mod:`~hsm_casimir.cli`.
"""

__version__ = "0.1.0"

from .calibration import CasimirCalibration, GroundTruth, ScanPlan, run_pipeline
from .dielectric import (
    GOLD_DRUDE, AbsorptionTable, Drude, DrudeParameters, IdealMetal, Tabulated,
    TransparencyWindow, Vacuum, Windowed, apply_window, evaluate,
)
from .errors import ConfigError, ConvergenceError, DomainError, FitError, TailConfigError
from .lifshitz import (
    ForceQuery, ForceResult, Geometry, QuadratureSettings, force_ratio_windowed,
    ideal_plate_pressure, ideal_sphere_plate, lifshitz_sphere_plate,
)
