"""Equilibrium strategies for time-inconsistent stochastic control with a
discount that becomes exponential after a finite delay."""

from .classical import (InfiniteHorizonSolution, precommit_value, shift_equivalence_check,
                        solve_discounted_tail, solve_finite_horizon, solve_infinite_horizon)
from .equilibrium import (BiTimeField, GluedSolution, evaluate_strategy_value, glue,
                          solve_equilibrium_system)
from .errors import (CompositionError, DomainError, EquihorError, SimulationError,
                     StabilityError, StructuralError, UnsupportedProblemError)
from .model import (DiscountSpec, ProblemSpec, catalog_problem, discount_eval,
                    exponential_cost_problem, tail_bound, validate_problem, zero_cost_problem)
from .pde import Grid1D, StrategyTable, ValueField
from .recursive import (RecursiveCostSpec, catalog_recursive_spec, decomposition_check,
                        recursive_cost_field, tail_reduction_check)
from .sim import PathBatch, mc_cost, naive_agent, simulate_feedback, spike_cost

__version__ = "0.1.0"

__all__ = [
    "BiTimeField", "CompositionError", "DiscountSpec", "DomainError", "EquihorError", "Grid1D",
    "GluedSolution", "InfiniteHorizonSolution", "PathBatch", "ProblemSpec", "RecursiveCostSpec",
    "SimulationError", "StabilityError", "StrategyTable", "StructuralError",
    "UnsupportedProblemError", "ValueField", "catalog_problem", "catalog_recursive_spec",
    "decomposition_check", "discount_eval", "evaluate_strategy_value", "exponential_cost_problem",
    "glue", "mc_cost", "naive_agent", "precommit_value", "recursive_cost_field",
    "shift_equivalence_check", "simulate_feedback", "solve_discounted_tail",
    "solve_equilibrium_system", "solve_finite_horizon", "solve_infinite_horizon", "spike_cost",
    "tail_bound", "tail_reduction_check", "validate_problem", "zero_cost_problem",
]
