"""Sub-supersolution, truncation and frozen-gradient fixed-point solver for
singular convective quasilinear elliptic problems on boxes in 1D and 2D."""

from .bracket import Bracket, find_constant_subsolution, shift_reaction, truncate
from .errors import (
    BracketError,
    NoConvergence,
    ParseError,
    SolverError,
    UnfreezeError,
    ValidationError,
)
from .experiments import ExperimentResult, ExperimentSpec, run_experiment, run_solve
from .fixed_point import iterate_scalar, iterate_system
from .frozen_solver import ScalarProblem, SystemProblem, solve_frozen_scalar
from .grid import DiscreteField, Grid, build_grid
from .operators import DiscreteEnergy, OperatorSpec
from .reactions import ReactionSpec, Term, h_family, sine_ladder, system_family

__version__ = "0.1.0"

__all__ = [
    "Bracket",
    "BracketError",
    "DiscreteEnergy",
    "DiscreteField",
    "ExperimentResult",
    "ExperimentSpec",
    "Grid",
    "NoConvergence",
    "OperatorSpec",
    "ParseError",
    "ReactionSpec",
    "ScalarProblem",
    "SolverError",
    "SystemProblem",
    "Term",
    "UnfreezeError",
    "ValidationError",
    "build_grid",
    "find_constant_subsolution",
    "h_family",
    "iterate_scalar",
    "iterate_system",
    "run_experiment",
    "run_solve",
    "shift_reaction",
    "sine_ladder",
    "solve_frozen_scalar",
    "system_family",
    "truncate",
]
