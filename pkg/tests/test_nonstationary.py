import math

import numpy as np
import pytest

from illiquid import (BlackScholes, DomainError, FrozenLognormal, GridConfig,
                      solve_surface, solve_vbar, surface_residual,
                      vhat_eval_ns)
from illiquid.nonstationary import (boundary_representation, default_tmax,
                                    freeze_model)


def test_default_tmax_discount_tail(params):
    t = default_tmax(params)
    assert math.exp(-params.rho_lam * t) <= 1e-8


def test_short_tmax_rejected(bs_model, params, util):
    with pytest.raises(DomainError):
        solve_surface(bs_model, params, util, 1.0, tmax=1.0)


def test_freeze_model(bs_model, disc_model):
    frozen = freeze_model(bs_model, 2.5)
    assert isinstance(frozen, FrozenLognormal) and frozen.t0 == 2.5
    assert freeze_model(disc_model, 2.5) is disc_model


def test_terminal_slice_is_frozen_stationary(bs_model, params, util):
    cfg = GridConfig(n=128, richardson=False)
    tmax = default_tmax(params)
    vs = solve_surface(bs_model, params, util, 1.5, cfg, tmax=tmax)
    term = solve_vbar(freeze_model(bs_model, tmax), params, util, 1.5, cfg)
    np.testing.assert_allclose(vs.vbar[-1], term.vbar, rtol=1e-12)


def test_time_constant_model_gives_stationary_solution(logn_model, logn_value,
                                                       params, util):
    """Marching a distribution with no time dependence must reproduce the
    stationary solve slice by slice."""
    vs = solve_surface(logn_model, params, util, logn_value.theta1)
    vg = solve_vbar(logn_model, params, util, logn_value.theta1)
    sup = float(np.max(np.abs(vs.vbar[0] - vg.vbar)))
    assert sup < 1e-8 * float(np.max(vg.vbar))
    mid = len(vs.t) // 2
    assert float(np.max(np.abs(vs.vbar[mid] - vg.vbar))) < 1e-8


def test_semi_discrete_residual(bs_model, params, util):
    vs = solve_surface(bs_model, params, util, 1.9538,
                       GridConfig(richardson=False))
    assert surface_residual(vs, bs_model, params, util) < 1e-5


def test_surface_monotone_concave_slices(bs_surface):
    for j in (0, len(bs_surface.t) // 2, len(bs_surface.t) - 1):
        v = bs_surface.vbar[j]
        assert np.all(np.diff(v) > 0)
        slopes = np.diff(v) / np.diff(bs_surface.xi)
        assert np.all(np.diff(slopes) < 1e-8 * slopes[:-1])


def test_value_increasing_in_time(bs_surface):
    """The lognormal variance grows with the interarrival time, and with it
    the retrade gain, so vbar(t, xi) increases in t at fixed xi."""
    mid = len(bs_surface.xi) // 2
    col = bs_surface.vbar[:, mid]
    assert col[0] < col[len(col) // 2] < col[-1]


def test_boundary_column_integral_representation(bs_surface, bs_model,
                                                 params, util):
    for t in (0.0, 1.0):
        j = int(np.argmin(np.abs(bs_surface.t - t)))
        want = boundary_representation(bs_model, params, util,
                                       bs_surface.theta1,
                                       float(bs_surface.t[j]),
                                       float(bs_surface.t[-1]))
        assert bs_surface.vbar[j, 0] == pytest.approx(want, rel=1e-4)


def test_time_bracket_domain(bs_surface):
    with pytest.raises(DomainError):
        bs_surface.value_at(-0.5, 2.0)
    with pytest.raises(DomainError):
        bs_surface.value_at(bs_surface.t[-1] + 1.0, 2.0)


def test_vhat_ns_homogeneity(bs_surface, params, util):
    v1 = vhat_eval_ns(bs_surface, util, params, 0.0, 3.0, 1.1)
    v2 = vhat_eval_ns(bs_surface, util, params, 0.0, 6.0, 2.2)
    assert v2 == pytest.approx(2.0**util.gamma * v1, rel=1e-12)
