"""Time-dependent reduced value equation.

Backward-marches

    (rho+lambda) vbar - dvbar/dt - Utilde(dvbar/dxi) - G(t, xi) = 0,
    G(t, xi) = lambda * theta1 * E[(xi + Z(t))^gamma],

from a terminal slice at Tmax obtained from the stationary solver with the
return distribution frozen at Tmax, coupled with
theta1 = sup_{xi >= zlow} xi^(-gamma) vbar(0, xi).

At xi = zlow the slope blows up and Utilde(dvbar/dxi) = 0, so the boundary
node obeys the ODE dB/dt = (rho+lambda) B - G(t, zlow), which is marched
with the same explicit steps; the integral representation
B(t) = int_t^inf exp(-(rho+lambda)(s-t)) G(s, zlow) ds serves as an
independent check.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from .market import (BlackScholes, DomainError, FrozenLognormal, MarketParams,
                     PowerUtility, ReturnModel, g_scaled)
from .stationary import (GridConfig, SolverError, ValueGrid, _sup_ratio,
                         _check_argmax_interior, geometric_grid,
                         pure_consumption_coeff, solve_vbar)


# cap on stored time slices; the march itself always uses the full step grid
_MAX_KEPT = 1600


def default_tmax(params: MarketParams) -> float:
    """Horizon with discount tail exp(-(rho+lambda)Tmax) < 1e-8."""
    return float(math.ceil(18.5 / params.rho_lam))


def freeze_model(model: ReturnModel, t: float) -> ReturnModel:
    """Stationary model with distribution p(t, dz) held fixed."""
    if model.stationary:
        return model
    if isinstance(model, BlackScholes):
        return FrozenLognormal(t0=t, b=model.b, sigma=model.sigma)
    raise DomainError(f"cannot freeze model of type {type(model).__name__}")


@dataclass
class ValueSurface:
    """Reduced value function vbar(t, xi) on a (t, xi) grid."""

    t: np.ndarray              # increasing, t[0] = 0, t[-1] = Tmax
    xi: np.ndarray
    vbar: np.ndarray           # shape (nt, nxi)
    dvbar_dxi: np.ndarray      # +inf in the boundary column
    theta1: float
    zlow: float
    gamma: float
    info: dict = field(default_factory=dict)

    def slice_grid(self, j: int) -> ValueGrid:
        return ValueGrid(xi=self.xi, vbar=self.vbar[j], dvbar=self.dvbar_dxi[j],
                         theta1=self.theta1, zlow=self.zlow, gamma=self.gamma)

    def _bracket(self, t: float):
        if t < -1e-12 or t > self.t[-1] + 1e-12:
            raise DomainError("t outside [0, Tmax]")
        j = int(np.searchsorted(self.t, t) - 1)
        j = min(max(j, 0), len(self.t) - 2)
        w = (t - self.t[j]) / (self.t[j + 1] - self.t[j])
        return j, min(max(w, 0.0), 1.0)

    def value_at(self, t: float, xi: float) -> float:
        j, w = self._bracket(t)
        lo = PchipInterpolator(self.xi, self.vbar[j])(xi)
        hi = PchipInterpolator(self.xi, self.vbar[j + 1])(xi)
        return float((1.0 - w) * lo + w * hi)

    def slope_at(self, t: float, xi: float) -> float:
        j, w = self._bracket(t)
        lo = self.slice_grid(j).slope_at(xi)
        hi = self.slice_grid(j + 1).slope_at(xi)
        return float((1.0 - w) * lo + w * hi)

    def to_csv(self, path, max_slices: int = 129, extra_comment: str = ""):
        stride = max(1, (len(self.t) - 1) // max(1, max_slices - 1))
        rows = io.StringIO()
        rows.write(f"# theta1={self.theta1:.17g} zlow={self.zlow:.17g} "
                   f"gamma={self.gamma:.17g} nt={len(self.t)} n={len(self.xi)}")
        if extra_comment:
            rows.write(" " + extra_comment)
        rows.write("\n")
        rows.write("t,xi,vbar,dvbar_dxi\n")
        for j in range(0, len(self.t), stride):
            for i in range(len(self.xi)):
                rows.write(f"{self.t[j]:.17g},{self.xi[i]:.17g},"
                           f"{self.vbar[j, i]:.17g},{self.dvbar_dxi[j, i]:.17g}\n")
        with open(path, "w", newline="\n") as fh:
            fh.write(rows.getvalue())


class _GCache:
    """theta1-independent moment field m(t, xi_i) = E[(xi_i + Z(t))^gamma],
    tabulated on a modest time grid and spline-interpolated onto the much
    finer marching grid; reused across theta1 iterations."""

    def __init__(self, model, params, u, xi, quad_nodes, n_t_table=513):
        self.model, self.params, self.u = model, params, u
        self.xi = xi
        self.quad_nodes = quad_nodes
        self.n_t_table = n_t_table
        self.tmax = None
        self._spline = None
        self.term_vbar = None  # warm start for the terminal stationary solve

    def build(self, tmax: float):
        if self.tmax == tmax:
            return
        t_tab = np.linspace(0.0, tmax, self.n_t_table)
        unit = MarketParams(rho=1.0, lam=1.0)  # strip lam: plain moments
        rows = np.empty((len(t_tab), len(self.xi)))
        for j, tj in enumerate(t_tab):
            rows[j] = g_scaled(self.model, unit, self.u, 1.0, tj, self.xi,
                               n_nodes=self.quad_nodes)
        self._spline = CubicSpline(t_tab, rows, axis=0)
        self.tmax = tmax

    def g_at(self, theta1: float, t) -> np.ndarray:
        """lambda * theta1 * m(t, .); t scalar or vector."""
        return self.params.lam * theta1 * self._spline(t)


def _estimate_nt(params, u, xi, tmax, cfl, vbar_scale):
    """Conservative global time step from the explicit stability bound,
    evaluated on the slowly-varying tail where the slope is smallest."""
    dxi = np.diff(xi)
    a_coef = pure_consumption_coeff(params, u) * max(vbar_scale, 1e-2)
    slope_est = a_coef * u.gamma * np.maximum(xi[1:] - xi[0], dxi) ** (u.gamma - 1.0)
    dham = u.gamma_tilde * u.k1_tilde * slope_est ** (-u.gamma_tilde - 1.0)
    dt = cfl / (params.rho_lam + float(np.max(dham / dxi)))
    return max(int(math.ceil(tmax / dt)), 32)


def solve_surface(model: ReturnModel, params: MarketParams, u: PowerUtility,
                  theta1: float, cfg: GridConfig = GridConfig(),
                  tmax: float | None = None, _cache=None) -> ValueSurface:
    """Backward Heun march of the reduced equation at fixed theta1.

    With cfg.richardson the spatial first-order error is removed by
    combining the solve with one on the nested 2n-1 grid (same time grid).
    """
    if theta1 < 0.0:
        raise DomainError("theta1 must be >= 0")
    tmax = default_tmax(params) if tmax is None else float(tmax)
    if math.exp(-params.rho_lam * tmax) > 1e-8 + 1e-15:
        raise DomainError("tmax too short: exp(-(rho+lambda)Tmax) must be <= 1e-8")
    if cfg.richardson:
        cfg_f = replace(cfg, n=2 * cfg.n - 1, richardson=False)
        cfg_c = replace(cfg, richardson=False)
        if _cache is not None:
            cache_c, cache_f = _cache
        else:
            cache_c = _GCache(model, params, u, geometric_grid(model.zlow, cfg),
                              cfg.quad_nodes)
            cache_f = _GCache(model, params, u,
                              geometric_grid(model.zlow, cfg_f), cfg.quad_nodes)
        fine = _solve_surface_raw(model, params, u, theta1, cfg_f, tmax,
                                  cache_f)
        coarse = _solve_surface_raw(model, params, u, theta1, cfg_c, tmax,
                                    cache_c, _nt_force=fine.info["nt"])
        vbar = 2.0 * fine.vbar[:, ::2] - coarse.vbar
        g_tab = cache_c.g_at(theta1, fine.t) if theta1 > 0.0 else 0.0
        dv_dt = np.gradient(vbar, fine.t, axis=0)
        rhs = np.maximum(params.rho_lam * vbar - dv_dt - g_tab, 0.0)
        dvbar = np.empty_like(vbar)
        dvbar[:, 0] = math.inf
        with np.errstate(divide="ignore"):
            dvbar[:, 1:] = (u.k1_tilde / rhs[:, 1:]) ** (1.0 / u.gamma_tilde)
        info = dict(coarse.info)
        info.update(rich_delta=float(np.max(np.abs(
            vbar - fine.vbar[:, ::2]))))
        return ValueSurface(t=fine.t, xi=coarse.xi, vbar=vbar,
                            dvbar_dxi=dvbar, theta1=theta1,
                            zlow=model.zlow, gamma=u.gamma, info=info)
    return _solve_surface_raw(model, params, u, theta1, cfg, tmax, _cache)


def _solve_surface_raw(model: ReturnModel, params: MarketParams,
                       u: PowerUtility, theta1: float, cfg: GridConfig,
                       tmax: float, _cache: _GCache = None,
                       _nt_force: int | None = None) -> ValueSurface:
    xi = geometric_grid(model.zlow, cfg)
    rl = params.rho_lam
    kt, gt = u.k1_tilde, u.gamma_tilde

    # terminal slice: stationary solve with the distribution frozen at Tmax
    cache = _cache or _GCache(model, params, u, xi, cfg.quad_nodes)
    frozen = freeze_model(model, tmax)
    term = solve_vbar(frozen, params, u, theta1, cfg, vbar0=cache.term_vbar)
    cache.term_vbar = term.vbar
    # the stiffness bound shrinks with the value scale, so sizing the step
    # for scale 1 keeps one shared time grid across theta1 iterations
    nt = _nt_force if _nt_force is not None else \
        _estimate_nt(params, u, xi, tmax, cfg.cfl, 1.0)
    dxi = np.diff(xi)
    scale = max(1.0, float(np.max(term.vbar)))
    slope_floor = 1e-10 * scale / (xi[-1] - xi[0])

    if theta1 > 0.0:
        cache.build(tmax)

    def g_row(tj):
        if theta1 == 0.0:
            return np.zeros(len(xi))
        return cache.g_at(theta1, tj)

    for _attempt in range(6):
        # only ~_MAX_KEPT time slices are kept; the march itself steps
        # through every node of the fine time grid
        stride = max(1, -(-nt // _MAX_KEPT))
        nt = stride * (-(-nt // stride))
        t_nodes = np.linspace(0.0, tmax, nt + 1)
        dt = tmax / nt
        t_kept = t_nodes[::stride]
        vbar = np.empty((len(t_kept), len(xi)))
        vbar[-1] = term.vbar
        ok = True
        n_clamped = 0

        def rhs_eval(v, g_vec):
            nonlocal n_clamped
            slopes = np.diff(v) / dxi
            bad = slopes <= slope_floor
            if np.any(bad):
                n_clamped += int(bad.sum())
                slopes = np.maximum(slopes, slope_floor)
            ham = kt * slopes ** (-gt)
            dham = gt * kt * slopes ** (-gt - 1.0)
            stiff = rl + float(np.max(dham / dxi))
            rhs = np.empty_like(v)
            rhs[0] = rl * v[0] - g_vec[0]                 # Utilde term vanishes
            rhs[1:] = rl * v[1:] - ham - g_vec[1:]
            return rhs, stiff

        v = term.vbar.copy()
        g_hi = g_row(t_nodes[nt])
        for j in range(nt - 1, -1, -1):
            k1, stiff = rhs_eval(v, g_hi)
            if dt * stiff > 1.0:
                ok = False  # CFL violated: refine the time grid and retry
                break
            g_lo = g_row(t_nodes[j])
            pred = v - dt * k1
            k2, stiff2 = rhs_eval(pred, g_lo)
            if dt * stiff2 > 1.0:
                ok = False
                break
            v = v - 0.5 * dt * (k1 + k2)                  # Heun step
            g_hi = g_lo
            if j % stride == 0:
                vbar[j // stride] = v
        if ok:
            break
        nt *= 2
    else:
        raise SolverError("could not satisfy the CFL bound after refinements")

    # slope from the equation: Utilde(dvbar/dxi) = (rho+lam)vbar - dvbar/dt - G
    g_tab = cache.g_at(theta1, t_kept) if theta1 > 0.0 else 0.0
    dv_dt = np.gradient(vbar, t_kept, axis=0)
    rhs = np.maximum(rl * vbar - dv_dt - g_tab, 0.0)
    dvbar = np.empty_like(vbar)
    dvbar[:, 0] = math.inf
    with np.errstate(divide="ignore"):
        dvbar[:, 1:] = (kt / rhs[:, 1:]) ** (1.0 / gt)

    return ValueSurface(t=t_kept, xi=xi, vbar=vbar, dvbar_dxi=dvbar,
                        theta1=theta1, zlow=model.zlow, gamma=u.gamma,
                        info={"nt": nt, "stride": stride,
                              "clamped": n_clamped,
                              "terminal_residual": term.info.get("residual")})


def surface_residual(vs: ValueSurface, model: ReturnModel,
                     params: MarketParams, u: PowerUtility,
                     quad_nodes: int = 64) -> float:
    """Sup-norm residual of the semi-discrete system
    (rho+lam) v - dv/dt - Utilde(D- v) - G(t, xi) on the stored slices,
    with dv/dt from centered differences in t and G recomputed from the
    model (no spline table).  End slices use one-sided stencils in t and
    are excluded from the sup.

    Meaningful for a non-extrapolated solve; Richardson output satisfies
    the continuum equation better but the upwind stencil worse."""
    rl = params.rho_lam
    kt, gt = u.k1_tilde, u.gamma_tilde
    g_tab = np.empty_like(vs.vbar)
    for j, tj in enumerate(vs.t):
        g_tab[j] = g_scaled(model, params, u, vs.theta1, tj, vs.xi,
                            n_nodes=quad_nodes)
    dv_dt = np.gradient(vs.vbar, vs.t, axis=0)
    slopes = np.diff(vs.vbar, axis=1) / np.diff(vs.xi)
    ham = kt * np.maximum(slopes, 1e-300) ** (-gt)
    res = np.empty_like(vs.vbar)
    res[:, 0] = rl * vs.vbar[:, 0] - dv_dt[:, 0] - g_tab[:, 0]
    res[:, 1:] = rl * vs.vbar[:, 1:] - dv_dt[:, 1:] - ham - g_tab[:, 1:]
    return float(np.max(np.abs(res[1:-1])))


def fixed_point_theta1_ns(model: ReturnModel, params: MarketParams,
                          u: PowerUtility, cfg: GridConfig = GridConfig(),
                          tmax: float | None = None) -> ValueSurface:
    """Outer secant-accelerated iteration on theta1 with the sup taken
    over the t = 0 slice."""
    from .stationary import _secant_fixed_point

    tmax = default_tmax(params) if tmax is None else float(tmax)
    if cfg.richardson:
        cfg_f = replace(cfg, n=2 * cfg.n - 1, richardson=False)
        cache = (_GCache(model, params, u, geometric_grid(model.zlow, cfg),
                         cfg.quad_nodes),
                 _GCache(model, params, u, geometric_grid(model.zlow, cfg_f),
                         cfg.quad_nodes))
    else:
        cache = _GCache(model, params, u, geometric_grid(model.zlow, cfg),
                        cfg.quad_nodes)

    def solve(theta1):
        return solve_surface(model, params, u, theta1, cfg, tmax,
                             _cache=cache)

    theta1, vs, history, iters = _secant_fixed_point(solve, cfg)
    sup, i = _sup_ratio(vs.slice_grid(0))
    i, edge_flat = _check_argmax_interior(vs.slice_grid(0), i)
    vs.theta1 = theta1
    vs.info.update(fp_iters=iters, fp_history=history,
                   argmax_index=i, argmax_edge_flat=edge_flat)
    return vs


def boundary_representation(model: ReturnModel, params: MarketParams,
                            u: PowerUtility, theta1: float, t: float,
                            tmax: float, n_sub: int = 4096) -> float:
    """Quadrature of int_t^inf exp(-(rho+lambda)(s-t)) G(s, zlow) ds, with the
    tail beyond tmax bounded by freezing the distribution there."""
    rl = params.rho_lam
    s = np.linspace(t, tmax, n_sub)
    g_vals = np.array([g_scaled(model, params, u, theta1, sj, model.zlow)
                       for sj in s])
    integrand = np.exp(-rl * (s - t)) * g_vals
    head = float(np.trapezoid(integrand, s))
    tail = math.exp(-rl * (tmax - t)) * g_vals[-1] / rl
    return head + tail


def vhat_eval_ns(vs: ValueSurface, u: PowerUtility, params: MarketParams,
                 t: float, x: float, a: float, which: str = "value") -> float:
    """vhat(t, x, a) = a^gamma vbar(t, x/a) and its x-derivative
    a^(gamma-1) dvbar/dxi(t, x/a); linear in t, monotone cubic in xi."""
    if a < 0.0:
        raise DomainError("negative allocations are not supported here")
    if a == 0.0:
        a_coef = pure_consumption_coeff(params, u)
        if which == "value":
            return a_coef * x**u.gamma
        return a_coef * u.gamma * x ** (u.gamma - 1.0) if x > 0 else math.inf
    floor = a * vs.zlow
    if x < floor - 1e-12 * max(1.0, floor):
        raise DomainError("x must be >= l(a)")
    xi = min(max(x / a, vs.zlow), vs.xi[-1])
    if which == "value":
        return a**u.gamma * vs.value_at(t, xi)
    if which == "dvalue_dx":
        return a ** (u.gamma - 1.0) * vs.slope_at(t, xi)
    raise ValueError(f"unknown selector {which!r}")
