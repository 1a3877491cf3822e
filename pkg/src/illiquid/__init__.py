"""Optimal consumption and investment when the risky asset trades only at
Poisson-arrival random times.

Power utility collapses the problem to one spatial dimension: the value
function is theta1 * x^gamma with theta1 a fixed point coupling a reduced
HJB equation to the argmax of the trade-date allocation.  The package
solves the stationary and time-dependent reduced equations, the
between-trade consumption ODE, and validates the result by simulation.
"""

from .market import (AssumptionReport, BlackScholes, DiscreteStationary,
                     DomainError, FrozenLognormal, MarketParams,
                     NumericsError, PowerUtility, ReturnModel, bs_density,
                     g_scaled, g_scaled_dx, l_bound, utility_eval,
                     validate_assumptions)
from .stationary import (GridConfig, SolverError, ValueGrid,
                         fixed_point_theta1, hjb_residual, solve_vbar,
                         vhat_eval)
from .nonstationary import (ValueSurface, boundary_representation,
                            default_tmax, fixed_point_theta1_ns,
                            solve_surface, surface_residual, vhat_eval_ns)
from .bvp import (ConsumptionPath, baseline_y0, costate_residual,
                  feedback_consistency, general_rhs, optimality_gap,
                  power_rhs, solve_bvp)
from .policy import (Policy, build_policy, feedback_rate, locate_xi_star,
                     optimal_allocation)
from .simulate import (SimPath, SimResult, monte_carlo, path_rng,
                       sample_market, simulate_path)

__version__ = "0.1.0"

__all__ = [
    "AssumptionReport", "BlackScholes", "ConsumptionPath",
    "DiscreteStationary", "DomainError", "FrozenLognormal", "GridConfig",
    "MarketParams", "NumericsError", "Policy", "PowerUtility", "ReturnModel",
    "SimPath", "SimResult", "SolverError", "ValueGrid", "ValueSurface",
    "baseline_y0", "boundary_representation", "bs_density", "build_policy",
    "costate_residual", "default_tmax", "feedback_consistency",
    "feedback_rate", "fixed_point_theta1", "fixed_point_theta1_ns",
    "g_scaled", "g_scaled_dx", "general_rhs", "hjb_residual", "l_bound",
    "locate_xi_star",
    "monte_carlo", "optimal_allocation", "optimality_gap", "path_rng",
    "power_rhs", "sample_market", "simulate_path", "solve_bvp",
    "solve_surface", "solve_vbar", "surface_residual", "utility_eval",
    "validate_assumptions",
    "vhat_eval", "vhat_eval_ns",
]
