"""Differential dynamic programming for 1D distributed-parameter systems.

Forward PDE rollout, backward value-model integration, gain synthesis, the
iterative solver with weight annealing, a kernel Riccati reference solver, and
oracle-based verification utilities.
"""

from .backward import EULER, RK2, SEMI_IMPLICIT, Scheme, ValueTrajectory, backward_pass
from .cost import CostSpec, cost_partials, reaching_regions, region_fields, running_cost, total_cost
from .errors import ConfigError, DivergenceError, LineSearchError
from .gains import GainTrajectory, VariationTrajectory, apply_update, compute_gains, variation_rollout
from .grid import BoundaryCondition, SpatialGrid, contract_kernel, inner_domain, make_grid, second_difference
from .lqr import LqrProblem, RiccatiTrajectory, check_ddp_equivalence, lqr_backward, lqr_closed_loop, lqr_controls
from .models import BurgersModel, BurgersParams, HeatModel, HeatParams, LinearModel, StateTrajectory, rollout
from .solver import AnnealConfig, IterationRecord, Solution, SolverConfig, anneal_solve, backtracking_search, ddp_solve

__version__ = "0.1.0"

__all__ = [
    "AnnealConfig", "BoundaryCondition", "BurgersModel", "BurgersParams",
    "ConfigError", "CostSpec", "DivergenceError", "EULER", "GainTrajectory",
    "HeatModel", "HeatParams", "IterationRecord", "LineSearchError",
    "LinearModel", "LqrProblem", "RK2", "RiccatiTrajectory", "Scheme",
    "SEMI_IMPLICIT", "Solution", "SolverConfig", "SpatialGrid",
    "StateTrajectory", "ValueTrajectory", "VariationTrajectory",
    "anneal_solve", "apply_update", "backtracking_search", "backward_pass",
    "check_ddp_equivalence", "compute_gains", "contract_kernel",
    "cost_partials", "ddp_solve", "inner_domain", "lqr_backward",
    "lqr_closed_loop", "lqr_controls", "make_grid", "reaching_regions",
    "region_fields", "rollout", "running_cost", "second_difference",
    "total_cost", "variation_rollout",
]
