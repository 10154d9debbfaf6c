"""Conditional gradient (fictitious play) solver for potential mean field games on the torus."""

from .config import ExperimentConfig, load_config
from .diagnostics import ReferenceSolution, RateFit, fit_rate, make_reference, monte_carlo_value, norms
from .errors import CflError, ConfigError, DiagnosticsError, DomainError, InvariantError, MfgError, SolverError
from .fokker_planck import FlowPair, solve_fp
from .gcg import GcgState, IterateRecord, StepSchedule, gcg_step, run
from .grid import ScalarField, TorusGrid, VectorField
from .hjb import CouplingState, ValueFunction, solve_hjb
from .model import CouplingSpec, Custom, Hamiltonian, MfgProblem, QuadraticPlus
from .profiles import default_problem

__all__ = [
    "CflError", "ConfigError", "CouplingSpec", "CouplingState", "Custom", "DiagnosticsError",
    "DomainError", "ExperimentConfig", "FlowPair", "GcgState", "Hamiltonian", "InvariantError",
    "IterateRecord", "MfgError", "MfgProblem", "QuadraticPlus", "RateFit", "ReferenceSolution",
    "ScalarField", "SolverError", "StepSchedule", "TorusGrid", "ValueFunction", "VectorField",
    "default_problem", "fit_rate", "gcg_step", "load_config", "make_reference", "monte_carlo_value",
    "norms", "run", "solve_fp", "solve_hjb",
]
