"""Sample average approximation of a risk-neutral sparse elliptic control problem."""
from .mesh_fem import (
    ControlBounds,
    ControlField,
    StateField,
    StructuredMesh,
    build_mesh,
    l2_error_nested,
    quasi_interpolate,
)
from .prox_solver import SolverConfig, SolverReport, kkt_residual, semismooth_newton
from .random_field import ScenarioSet, build_reference_grid, kappa_eval, sample_scenarios
from .saa_problem import ProblemSpec, SAAProblem

__version__ = "0.1.0"
