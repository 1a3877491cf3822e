"""End-to-end acceptance battery.

Each test checks one headline guarantee at its stated tolerance and emits a
single PASS/FAIL line (visible with -s or in the captured output of a
failure); run the file with `pytest -v tests/test_acceptance.py` to get the
one-line-per-criterion summary.
"""

import math
import time

import numpy as np
import pytest

from illiquid import (FrozenLognormal, GridConfig, MarketParams, PowerUtility,
                      costate_residual, feedback_consistency,
                      fixed_point_theta1, fixed_point_theta1_ns, hjb_residual,
                      l_bound, monte_carlo, optimality_gap, solve_bvp,
                      solve_surface, solve_vbar, surface_residual, vhat_eval,
                      vhat_eval_ns)
from illiquid.cli import _crossings
from illiquid.stationary import geometric_grid, pure_consumption_coeff

T_SIM = 35.0   # exp(-0.2 * 35) ~ 9.1e-4


def _line(n, name, ok, detail):
    print(f"[criterion {n}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"criterion {n} ({name}): {detail}"


def test_c1_no_retrade_closed_form(disc_model, params, util):
    t0 = time.monotonic()
    vg = solve_vbar(disc_model, params, util, theta1=0.0)
    x0, a = 1.9, 1.0
    floor = l_bound(a, disc_model)
    coeff = pure_consumption_coeff(params, util)
    v_err = abs(vhat_eval(vg, util, params, x0, a)
                - coeff * (x0 - floor)**util.gamma) \
        / (coeff * (x0 - floor)**util.gamma)
    path = solve_bvp(vg, disc_model, params, util, x0=x0, a=a)
    c0_closed = (x0 - floor) * params.rho_lam / (1.0 - util.gamma)
    c_err = abs(path.c0 - c0_closed) / c0_closed
    dt = time.monotonic() - t0
    ok = v_err < 1e-5 and c_err < 1e-5 and dt < 1.0
    _line(1, "closed form at zero retrade gain", ok,
          f"value rel err {v_err:.2e}, c0 rel err {c_err:.2e}, {dt:.2f}s")


def test_c2_solver_residuals(disc_model, bs_model, params, util):
    t0 = time.monotonic()
    vg = solve_vbar(disc_model, params, util, 1.5836,
                    GridConfig(richardson=False))
    r_stat = hjb_residual(vg, disc_model, params, util)
    t_stat = time.monotonic() - t0
    t0 = time.monotonic()
    vs = solve_surface(bs_model, params, util, 1.9538,
                       GridConfig(richardson=False))
    r_ns = surface_residual(vs, bs_model, params, util)
    t_ns = time.monotonic() - t0
    ok = r_stat <= 1e-6 and r_ns <= 1e-5 and t_stat < 30 and t_ns < 30
    _line(2, "discrete-system residuals at n=512", ok,
          f"stationary {r_stat:.2e} ({t_stat:.1f}s), "
          f"time-dependent {r_ns:.2e} ({t_ns:.1f}s)")


def test_c3_cross_solver_agreement(logn_model, logn_value, params, util):
    vs = fixed_point_theta1_ns(logn_model, params, util)
    th_err = abs(vs.theta1 - logn_value.theta1) / logn_value.theta1
    sup = float(np.max(np.abs(vs.vbar[0] - logn_value.vbar)))
    ok = th_err < 1e-5 and sup < 1e-5
    _line(3, "time marcher vs stationary on a frozen distribution", ok,
          f"theta1 rel diff {th_err:.2e}, vbar sup diff {sup:.2e}")


def test_c4_dominates_no_retrade_baseline(bs_surface, bs_model, params, util):
    rng = np.random.default_rng(0)
    worst = math.inf
    for _ in range(20):
        a = float(rng.uniform(0.3, 2.0))
        floor = l_bound(a, bs_model)
        x0 = floor + float(rng.uniform(0.05, 3.0))
        path = solve_bvp(bs_surface, bs_model, params, util, x0=x0, a=a)
        worst = min(worst, float(np.min(path.y - path.baseline(params, util))))
    ok = worst >= -1e-8
    _line(4, "wealth path above the no-retrade baseline (20 draws)", ok,
          f"worst margin {worst:.2e}")


def test_c5_value_path_triangle(disc_path, disc_value, disc_model,
                                logn_path, logn_value, logn_model,
                                bs_path, bs_surface, bs_model, params, util):
    cases = [("discrete", disc_path, disc_value, disc_model),
             ("lognormal", logn_path, logn_value, logn_model),
             ("time-dependent", bs_path, bs_surface, bs_model)]
    detail, ok = [], True
    for name, path, value, model in cases:
        fb = feedback_consistency(path, value, params, util).max()
        fen = np.abs(optimality_gap(path, value, params, util)).max() \
            / float(util.u(path.c0))
        cr = costate_residual(path, value, model, params, util).max()
        ok &= fb <= 1e-3 and fen <= 1e-5 and cr <= 1e-3
        detail.append(f"{name}: fb {fb:.1e}, fenchel {fen:.1e}, "
                      f"costate {cr:.1e}")
    _line(5, "path/value/costate consistency", ok, "; ".join(detail))


def test_c6_homogeneity(disc_value, disc_policy, disc_model, params, util):
    beta = 2.0
    v1 = vhat_eval(disc_value, util, params, 1.7, 0.9)
    v2 = vhat_eval(disc_value, util, params, beta * 1.7, beta * 0.9)
    rep_err = abs(v2 - beta**util.gamma * v1) / abs(v2)
    t0 = time.monotonic()
    base = monte_carlo(7, 10_000, disc_policy, disc_model, params, util,
                       x0=1.0, t_sim=T_SIM)
    scaled = monte_carlo(7, 10_000, disc_policy, disc_model, params, util,
                         x0=beta, t_sim=T_SIM)
    dt = time.monotonic() - t0
    ratio = scaled.mean / base.mean
    se_r = ratio * math.hypot(scaled.se / scaled.mean, base.se / base.mean)
    mc_ok = abs(ratio - beta**util.gamma) <= 3.0 * se_r
    ok = rep_err <= 1e-12 and mc_ok and dt < 60.0
    _line(6, "positive homogeneity", ok,
          f"representation rel err {rep_err:.1e}, MC ratio {ratio:.6f} "
          f"vs {beta**util.gamma:.6f} (3SE {3*se_r:.1e}), {dt:.0f}s")


def test_c7_simulation_matches_value(disc_policy, disc_model, params, util):
    res = monte_carlo(1234, 10_000, disc_policy, disc_model, params, util,
                      x0=1.0, t_sim=T_SIM)
    gap = abs(res.mean - res.value_prediction)
    bound = 3.0 * res.se + res.truncation_bound
    base_ok = res.baseline_mean <= res.mean + 2.0 * res.baseline_se
    ok = math.exp(-params.rho * T_SIM) <= 1e-3 and gap <= bound and base_ok
    _line(7, "Monte Carlo value consistency", ok,
          f"|mean - prediction| {gap:.2e} <= {bound:.2e}, baseline "
          f"{res.baseline_mean:.4f} <= optimal {res.mean:.4f} + 2SE")


def test_c8_qualitative_figures(bs_path, bs_surface, bs_model, params, util):
    # consumption under retrade opportunities starts higher, then crosses
    # the no-opportunity rate exactly once as the floor nears
    above = bool(np.all(bs_path.y >= bs_path.baseline(params, util) - 1e-8))
    rate = params.rho_lam / (1.0 - util.gamma)
    c_base = (bs_path.x0 - bs_path.floor) * rate * np.exp(-rate * bs_path.s)
    n_cross = _crossings(bs_path.c, c_base)
    # freezing the return distribution at three years removes the volatility
    # growth and slows consumption at s = 0
    frozen = FrozenLognormal(t0=3.0, b=bs_model.b, sigma=bs_model.sigma)
    vg = solve_vbar(frozen, params, util, bs_surface.theta1)
    path_f = solve_bvp(vg, frozen, params, util, x0=bs_path.x0, a=bs_path.a)
    slower = path_f.c0 < bs_path.c0
    ok = above and n_cross == 1 and slower
    _line(8, "qualitative path comparisons", ok,
          f"above baseline {above}, crossings {n_cross}, frozen c0 "
          f"{path_f.c0:.4f} < {bs_path.c0:.4f} {slower}")


def test_c9_structural_invariants(disc_value, logn_value, bs_surface,
                                  disc_path, logn_path, bs_path,
                                  disc_policy, disc_model, params, util):
    t0 = time.monotonic()
    checks = []
    # utility identities at random arguments
    rng = np.random.default_rng(1)
    y = rng.uniform(0.1, 10.0, 50)
    checks.append(np.allclose(util.marginal(util.inverse_marginal(y)), y,
                              rtol=1e-10))
    # grid nesting
    fine = geometric_grid(1.0, GridConfig(n=255))
    checks.append(np.allclose(fine[::2], geometric_grid(1.0, GridConfig(n=128)),
                              rtol=1e-13))
    # value functions increasing and concave
    for vg in (disc_value, logn_value):
        checks.append(bool(np.all(np.diff(vg.vbar) > 0)))
        s = np.diff(vg.vbar) / np.diff(vg.xi)
        checks.append(bool(np.all(np.diff(s) < 1e-10 * s[:-1])))
    checks.append(bool(np.all(np.diff(bs_surface.vbar[0]) > 0)))
    # paths: wealth decreasing, consumption positive, budget respected
    for p in (disc_path, logn_path, bs_path):
        live = p.c > 0
        checks.append(bool(np.all(np.diff(p.y[live]) < 0)))
        checks.append(bool(np.all(p.y >= p.floor - 1e-10)))
        checks.append(np.trapezoid(p.c, p.s) <= p.x0 - p.floor + 1e-6)
    # policy homogeneity and simulator determinism
    checks.append(disc_policy.pi_star * disc_policy.xi_star == pytest.approx(1.0))
    r1 = monte_carlo(3, 200, disc_policy, disc_model, params, util,
                     x0=1.0, t_sim=T_SIM)
    r2 = monte_carlo(3, 200, disc_policy, disc_model, params, util,
                     x0=1.0, t_sim=T_SIM, threads=2)
    checks.append(r1.mean == r2.mean)
    dt = time.monotonic() - t0
    ok = all(checks) and dt < 120.0
    _line(9, "structural invariants", ok,
          f"{len(checks)} checks, {sum(map(bool, checks))} passed, {dt:.1f}s")
