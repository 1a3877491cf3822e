import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from illiquid import (DomainError, GridConfig, SolverError, g_scaled,
                      hjb_residual, solve_vbar, vhat_eval)
from illiquid.stationary import geometric_grid, pure_consumption_coeff


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

def test_grid_endpoints_and_monotonicity():
    cfg = GridConfig(n=256, xi_max=40.0)
    xi = geometric_grid(0.95, cfg)
    assert xi[0] == 0.95 and xi[-1] == 40.0
    assert np.all(np.diff(xi) > 0)


def test_grid_nesting():
    """The 2n-1 grid must contain the n grid at the even indices, otherwise
    the extrapolation pair mixes interpolation error into the difference."""
    cfg = GridConfig(n=128, xi_max=30.0)
    coarse = geometric_grid(1.0, cfg)
    fine = geometric_grid(1.0, GridConfig(n=255, xi_max=30.0))
    np.testing.assert_allclose(fine[::2], coarse, rtol=1e-13)


def test_grid_too_small_raises():
    with pytest.raises(DomainError):
        geometric_grid(1.0, GridConfig(n=32))


# ---------------------------------------------------------------------------
# solved value function
# ---------------------------------------------------------------------------

def test_no_retrade_closed_form(disc_model, params, util):
    vg = solve_vbar(disc_model, params, util, theta1=0.0)
    coeff = pure_consumption_coeff(params, util)
    want = coeff * (vg.xi - vg.xi[0]) ** util.gamma
    np.testing.assert_allclose(vg.vbar, want, rtol=1e-14)


def test_stencil_residual_small(disc_model, params, util):
    vg = solve_vbar(disc_model, params, util, theta1=1.5,
                    cfg=GridConfig(richardson=False))
    assert hjb_residual(vg, disc_model, params, util) < 1e-6


def test_theta1_fixed_point_consistency(disc_value, util):
    """At the solution theta1 equals the sup of xi^(-gamma) vbar(xi)."""
    ratio = disc_value.vbar / disc_value.xi ** util.gamma
    assert float(np.max(ratio)) == pytest.approx(disc_value.theta1, rel=1e-6)
    k = disc_value.info["argmax_index"]
    assert 0 < k < len(disc_value.xi) - 1          # interior argmax


def test_value_monotone_and_concave(disc_value, logn_value):
    for vg in (disc_value, logn_value):
        assert np.all(np.diff(vg.vbar) > 0)
        slopes = np.diff(vg.vbar) / np.diff(vg.xi)
        assert np.all(np.diff(slopes) < 1e-10 * slopes[:-1])


def test_boundary_value(disc_value, disc_model, params, util):
    g0 = float(g_scaled(disc_model, params, util, disc_value.theta1, 0.0,
                        np.array([disc_model.zlow]))[0])
    assert disc_value.vbar[0] == pytest.approx(g0 / params.rho_lam, rel=1e-12)


def test_reproducible(disc_model, params, util, disc_value):
    from illiquid import fixed_point_theta1
    again = fixed_point_theta1(disc_model, params, util)
    assert again.theta1 == disc_value.theta1
    np.testing.assert_array_equal(again.vbar, disc_value.vbar)


def test_negative_theta1_raises(disc_model, params, util):
    with pytest.raises(DomainError):
        solve_vbar(disc_model, params, util, theta1=-0.1)


# ---------------------------------------------------------------------------
# independent oracle: the reduced equation as a desingularized IVP
# ---------------------------------------------------------------------------

def ivp_reference(model, params, u, theta1, d_targets):
    """High-accuracy solution of (rho+lam) v = Utilde(v') + G(xi) from the
    boundary, integrated in u = sqrt(xi - zlow) where the square-root layer
    is analytic.  Returns (values, slopes) at xi = zlow + d_targets."""
    rl = params.rho_lam
    kt, gt = u.k1_tilde, u.gamma_tilde
    zl = model.zlow

    def G(d):
        return float(g_scaled(model, params, u, theta1, 0.0,
                              np.array([zl + d]))[0])

    v0 = G(0.0) / rl
    a1 = math.sqrt(2.0 * kt / rl) if u.gamma == 0.5 else None
    assert a1 is not None, "oracle is set up for gamma = 1/2"

    def rhs(us, V):
        R = max(rl * V[0] - G(us * us), 1e-300)
        return [2.0 * us * (kt / R) ** (1.0 / gt)]

    u0 = 1e-8
    umax = math.sqrt(max(d_targets) * 1.05)
    sol = solve_ivp(rhs, (u0, umax), [v0 + a1 * u0], method="DOP853",
                    rtol=1e-12, atol=1e-14, dense_output=True)
    assert sol.success
    vals, slopes = [], []
    for d in d_targets:
        v = float(sol.sol(math.sqrt(d))[0])
        vals.append(v)
        slopes.append(kt / max(rl * v - G(d), 1e-300))
    return np.array(vals), np.array(slopes)


def test_value_matches_ivp_oracle(logn_value, logn_model, params, util):
    d = np.array([1e-4, 1e-3, 1e-2, 0.1, 1.0, 5.0])
    vals, slopes = ivp_reference(logn_model, params, util,
                                 logn_value.theta1, d)
    got_v = np.array([float(logn_value.value_at(logn_model.zlow + di))
                      for di in d])
    got_s = np.array([float(logn_value.slope_at(logn_model.zlow + di))
                      for di in d])
    np.testing.assert_allclose(got_v, vals, rtol=5e-6)
    # the slope is the sensitive quantity near the floor
    np.testing.assert_allclose(got_s, slopes, rtol=2e-4)


# ---------------------------------------------------------------------------
# auxiliary value scaling
# ---------------------------------------------------------------------------

def test_vhat_homogeneity(disc_value, params, util):
    x, a, beta = 3.1, 1.2, 2.0
    v1 = vhat_eval(disc_value, util, params, x, a)
    v2 = vhat_eval(disc_value, util, params, beta * x, beta * a)
    assert v2 == pytest.approx(beta**util.gamma * v1, rel=1e-12)


def test_vhat_zero_allocation_closed_form(disc_value, params, util):
    got = vhat_eval(disc_value, util, params, 2.0, 0.0)
    want = pure_consumption_coeff(params, util) * 2.0**util.gamma
    assert got == pytest.approx(want, rel=1e-12)
