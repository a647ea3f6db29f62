"""American puts with staircase strikes and Poisson exercise opportunities
in a market with different borrowing and lending rates."""

__version__ = "0.1.0"

from .boundary import ExerciseBoundary, extract_boundary, pasting_gap
from .lattice import LatticeSpec, binomial_american_put, black_scholes_put, lattice_value
from .market import MarketParams, dual_vertices, generator_eval, generator_via_dual, validate_assumptions
from .pde import GridSpec, ValueChain, solve_chain, solve_level, solve_top_level
from .simulation import SimConfig, estimate_value, run_stopping, simulate_arrivals, simulate_asset

__all__ = [
    "ExerciseBoundary", "GridSpec", "LatticeSpec", "MarketParams", "SimConfig", "ValueChain",
    "binomial_american_put", "black_scholes_put", "dual_vertices", "estimate_value",
    "extract_boundary", "generator_eval", "generator_via_dual", "lattice_value", "pasting_gap",
    "run_stopping", "simulate_arrivals", "simulate_asset", "solve_chain", "solve_level",
    "solve_top_level", "validate_assumptions",
]
