import numpy as np
import pytest

from illiquid import (DomainError, build_policy, feedback_rate,
                      locate_xi_star, optimal_allocation)


def test_xi_star_maximizes_trade_ratio(disc_value, util):
    xi_star, tie = locate_xi_star(disc_value, util)
    assert not tie
    best = float(disc_value.value_at(xi_star)) / xi_star**util.gamma
    grid_ratio = disc_value.vbar / disc_value.xi**util.gamma
    assert best >= float(np.max(grid_ratio)) - 1e-12 * best
    # the maximized ratio is theta1 itself
    assert best == pytest.approx(disc_value.theta1, rel=1e-6)


def test_xi_star_interior(disc_value, util):
    xi_star, _ = locate_xi_star(disc_value, util)
    assert disc_value.xi[0] < xi_star < disc_value.xi[-1]


def test_policy_report_and_pi(disc_policy):
    assert disc_policy.pi_star == pytest.approx(1.0 / disc_policy.xi_star)
    rep = disc_policy.report()
    assert "xi_star" in rep and "theta1" in rep


def test_allocation_homogeneous(disc_policy):
    a1 = optimal_allocation(disc_policy, 1.0)
    a3 = optimal_allocation(disc_policy, 3.0)
    assert a3 == pytest.approx(3.0 * a1, rel=1e-15)
    with pytest.raises(DomainError):
        optimal_allocation(disc_policy, -1.0)


def test_template_is_unit_allocation(disc_policy):
    tpl = disc_policy.path_template
    assert tpl is not None and tpl.a == 1.0
    assert tpl.x0 == pytest.approx(disc_policy.xi_star)


def test_no_template_option(disc_value, disc_model, params, util):
    pol = build_policy(disc_value, disc_model, params, util,
                       with_template=False)
    assert pol.path_template is None


def test_feedback_rate_floor_and_domain(disc_value, disc_model, params, util):
    floor = disc_model.zlow
    assert feedback_rate(disc_value, util, params, 0.0, floor, 1.0,
                         model=disc_model) == 0.0
    with pytest.raises(DomainError):
        feedback_rate(disc_value, util, params, 0.0, 0.5 * floor, 1.0,
                      model=disc_model)


def test_feedback_rate_matches_path_start(disc_value, disc_model, disc_path,
                                          params, util):
    c = feedback_rate(disc_value, util, params, 0.0, disc_path.x0,
                      disc_path.a, model=disc_model)
    assert c == pytest.approx(disc_path.c0, rel=1e-3)


def test_surface_policy(bs_surface, util):
    xi_star, _ = locate_xi_star(bs_surface, util)
    ratio = bs_surface.vbar[0] / bs_surface.xi**util.gamma
    assert float(bs_surface.value_at(0.0, xi_star)) / xi_star**util.gamma \
        >= float(np.max(ratio)) - 1e-10
