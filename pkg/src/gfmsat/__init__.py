"""Reduced-order dynamic-phasor simulation of complex-droop (dVOC) grid-forming
converters with saturation-informed current limiting."""
from .control import ConverterConfig, ConverterState, FrtOverrides, Mode, Strategy
from .core import GridModel, PerUnitBase, RotatedSetpoint, rotated_setpoint
from .equilibrium import SaturatedEquilibriumProblem, solve_saturated_equilibrium
from .errors import (
    ApplicabilityError,
    DomainError,
    GfmSatError,
    NetworkError,
    ScenarioError,
    SolverError,
)
from .network import Branch, FaultEvent, NetworkModel, Node, Shunt
from .simulation import ScenarioSpec, StabilityVerdict, TimeSeriesLog, Verdict, classify, run

__version__ = "0.1.0"
