"""Shared problem instances.

Everything expensive (fixed-point solves, template paths) is session-scoped;
the parameter set rho=0.2, lam=2, gamma=0.5 sits exactly on the growth bound
for the b=0.4, sigma=1 lognormal market, which is the interesting regime.
"""

import numpy as np
import pytest

from illiquid import (BlackScholes, DiscreteStationary, FrozenLognormal,
                      GridConfig, MarketParams, PowerUtility, build_policy,
                      fixed_point_theta1, fixed_point_theta1_ns, solve_bvp)


@pytest.fixture(scope="session")
def params():
    return MarketParams(rho=0.2, lam=2.0)


@pytest.fixture(scope="session")
def util():
    return PowerUtility(k1=1.0, gamma=0.5)


@pytest.fixture(scope="session")
def disc_model():
    # atom at -0.95 puts the worst return right at the admissibility floor
    return DiscreteStationary(points=(-0.95, 1.0), probs=(0.5, 0.5))


@pytest.fixture(scope="session")
def logn_model():
    return FrozenLognormal(t0=3.0, b=0.1, sigma=0.5)


@pytest.fixture(scope="session")
def bs_model():
    return BlackScholes(b=0.4, sigma=1.0)


@pytest.fixture(scope="session")
def disc_value(disc_model, params, util):
    return fixed_point_theta1(disc_model, params, util)


@pytest.fixture(scope="session")
def logn_value(logn_model, params, util):
    return fixed_point_theta1(logn_model, params, util)


@pytest.fixture(scope="session")
def bs_surface(bs_model, params, util):
    return fixed_point_theta1_ns(bs_model, params, util)


@pytest.fixture(scope="session")
def disc_path(disc_value, disc_model, params, util):
    return solve_bvp(disc_value, disc_model, params, util, x0=1.9, a=1.0)


@pytest.fixture(scope="session")
def logn_path(logn_value, logn_model, params, util):
    return solve_bvp(logn_value, logn_model, params, util, x0=2.0, a=1.0)


@pytest.fixture(scope="session")
def bs_path(bs_surface, bs_model, params, util):
    return solve_bvp(bs_surface, bs_model, params, util, x0=2.0, a=1.0)


@pytest.fixture(scope="session")
def disc_policy(disc_value, disc_model, params, util):
    return build_policy(disc_value, disc_model, params, util)


@pytest.fixture(scope="session")
def small_grid():
    return GridConfig(n=128)
