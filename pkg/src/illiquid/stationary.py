"""Stationary reduced value equation.

Solves, on a geometric grid xi in [zlow, xi_max],

    (rho + lambda) vbar(xi) - Utilde(vbar'(xi)) - G(xi) = 0,
    G(xi) = lambda * theta1 * E[(xi + Z)^gamma],
    vbar(zlow) = G(zlow) / (rho + lambda),

by policy iteration on an upwind (backward-difference) stencil, coupled
with the coefficient relation theta1 = sup_{xi >= zlow} xi^(-gamma)
vbar(xi).  The upwind scheme is first-order in the grid spacing, so by
default each solve is Richardson-extrapolated from a nested grid pair
(the geometric grid with 2n-1 nodes contains the n-node grid).  The
original value function is recovered as v(x) = theta1 * x^gamma and
vhat(x, a) = a^gamma * vbar(x / a).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import PchipInterpolator

from .market import (DomainError, MarketParams, NumericsError, PowerUtility,
                     ReturnModel, g_scaled)


class SolverError(NumericsError):
    """Iteration failed to converge; carries the last residual/iterate."""

    def __init__(self, message, residual=None, theta1=None):
        super().__init__(message)
        self.residual = residual
        self.theta1 = theta1


@dataclass(frozen=True)
class GridConfig:
    n: int = 512
    xi_max: float | None = None       # default 50 * max(zlow, 1)
    res_tol: float = 1e-8             # sup-norm residual target of the sweeps
    max_sweeps: int = 400_000
    fp_tol: float = 1e-8              # relative tolerance of the theta1 fixed point
    max_fp_iters: int = 400
    omega: float = 0.5                # damping of the plain theta1 iteration
    quad_nodes: int = 64
    cfl: float = 0.9
    richardson: bool = True           # extrapolate from the nested 2n-1 grid
    floor_delta: float = 1e-10        # first node offset over (xi_max - zlow)

    def resolve_xi_max(self, zlow: float) -> float:
        return self.xi_max if self.xi_max is not None else 50.0 * max(zlow, 1.0)


def geometric_grid(zlow: float, cfg: GridConfig) -> np.ndarray:
    """Nodes on [zlow, xi_max], geometric in the distance xi - zlow.

    vbar has a (xi - zlow)^gamma layer at the floor, so the spacing must
    scale with the distance to it: constant relative spacing makes the
    backward-difference error of the layer a smooth O(spacing) term that
    the Richardson pair can cancel.  The exponent is linear in i/(n-1),
    so the 2n-1 grid contains the n grid at the even indices."""
    if cfg.n < 64:
        raise DomainError("grid must have at least 64 nodes")
    xi_max = cfg.resolve_xi_max(zlow)
    if xi_max <= zlow:
        raise DomainError("xi_max must exceed zlow")
    tau = np.linspace(0.0, 1.0, cfg.n)
    xi = zlow + (xi_max - zlow) * cfg.floor_delta ** (1.0 - tau)
    xi[0] = zlow
    xi[-1] = xi_max
    return xi


def pure_consumption_coeff(params: MarketParams, u: PowerUtility) -> float:
    """Coefficient A of the no-opportunity closed form A*(xi - zlow)^gamma."""
    return u.k1 * ((params.rho + params.lam) / (1.0 - u.gamma)) ** (u.gamma - 1.0)


@dataclass
class ValueGrid:
    """Reduced stationary value function on a xi grid."""

    xi: np.ndarray
    vbar: np.ndarray
    dvbar: np.ndarray          # equation-consistent slope; +inf at the boundary node
    theta1: float
    zlow: float
    gamma: float
    info: dict = field(default_factory=dict)

    # -- evaluation ---------------------------------------------------------

    def _value_interp(self):
        return PchipInterpolator(self.xi, self.vbar, extrapolate=False)

    def _slope_interp(self):
        # the slope itself is singular at the floor; dvbar^(-1/(1-gamma))
        # (proportional to the feedback consumption rate) vanishes there,
        # is linear in xi - zlow nearby, and stays smooth, so that is the
        # quantity interpolated
        expo = -1.0 / (1.0 - self.gamma)
        with np.errstate(divide="ignore"):
            w = np.where(np.isinf(self.dvbar), 0.0, self.dvbar**expo)
        return PchipInterpolator(self.xi, w, extrapolate=False)

    def value_at(self, xi):
        return self._value_interp()(xi)

    def slope_at(self, xi):
        """vbar'(xi); +inf at the boundary."""
        xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
        w = np.asarray(self._slope_interp()(xi_arr), dtype=float)
        with np.errstate(divide="ignore"):
            out = np.where(w > 0.0, np.maximum(w, 1e-300) ** (-(1.0 - self.gamma)),
                           math.inf)
        return out if np.ndim(xi) else float(out[0])

    # -- serialization ------------------------------------------------------

    def to_csv(self, path, extra_comment: str = ""):
        with open(path, "w", newline="\n") as fh:
            fh.write(self._csv_text(extra_comment))

    def _csv_text(self, extra_comment: str = "") -> str:
        buf = io.StringIO()
        buf.write(f"# theta1={self.theta1:.17g} zlow={self.zlow:.17g} "
                  f"gamma={self.gamma:.17g} n={len(self.xi)}")
        if extra_comment:
            buf.write(" " + extra_comment)
        buf.write("\n")
        buf.write("xi,vbar,dvbar\n")
        for x, v, d in zip(self.xi, self.vbar, self.dvbar):
            buf.write(f"{x:.17g},{v:.17g},{d:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path) -> "ValueGrid":
        with open(path) as fh:
            header = fh.readline()
            meta = dict(tok.split("=", 1) for tok in header[1:].split()
                        if "=" in tok)
            fh.readline()  # column header
            data = np.loadtxt(fh, delimiter=",")
        return cls(xi=data[:, 0], vbar=data[:, 1], dvbar=data[:, 2],
                   theta1=float(meta["theta1"]), zlow=float(meta["zlow"]),
                   gamma=float(meta["gamma"]))


def _march(xi, g_vec, params, u, res_tol, max_sweeps, vbar0=None):
    """Policy iteration for the upwind discretization of
    (rho+lam) v = Utilde(D- v) + G with the boundary node held fixed.

    Each sweep freezes the feedback rate c_i = I(D- v) and solves the
    resulting lower-bidiagonal linear system exactly, left to right; the
    scheme is monotone, so the sweeps converge unconditionally.

    Returns (vbar, sup-residual, sweeps, n_clamped)."""
    rl = params.rho_lam
    kt, gt = u.k1_tilde, u.gamma_tilde
    dxi = np.diff(xi)
    v0 = g_vec[0] / rl
    a_coef = pure_consumption_coeff(params, u)
    boundary_layer = v0 + a_coef * (xi - xi[0]) ** u.gamma
    if vbar0 is None:
        vbar = boundary_layer.copy()
    else:
        # the exact solution increases with G, so the envelope keeps the
        # warm start monotone across the boundary reset
        vbar = np.maximum(vbar0, boundary_layer)
    scale = max(1.0, float(np.max(np.abs(vbar))))
    slope_floor = 1e-10 * scale / (xi[-1] - xi[0])
    n_clamped = 0
    resid = np.inf
    for sweep in range(max_sweeps):
        slopes = np.diff(vbar) / dxi
        bad = slopes <= slope_floor
        if np.any(bad):
            n_clamped += int(bad.sum())
            slopes = np.maximum(slopes, slope_floor)
        ham = kt * slopes ** (-gt)
        res = -rl * vbar[1:] + ham + g_vec[1:]
        resid = float(np.max(np.abs(res)))
        if resid <= res_tol:
            return vbar, resid, sweep, n_clamped
        cons = np.asarray(u.inverse_marginal(slopes), dtype=float)
        num = np.asarray(u.u(cons), dtype=float) + g_vec[1:]
        w = cons / dxi
        den = rl + w
        for i in range(len(dxi)):
            vbar[i + 1] = (num[i] + w[i] * vbar[i]) / den[i]
    raise SolverError(
        f"policy iteration did not reach residual {res_tol:g} "
        f"in {max_sweeps} sweeps (last residual {resid:g})",
        residual=resid)


def hjb_residual(vg: ValueGrid, model: ReturnModel, params: MarketParams,
                 u: PowerUtility, quad_nodes: int = 64) -> float:
    """Sup-norm residual of the upwind stencil
    (rho+lam) v_i - Utilde((v_i - v_{i-1}) / dxi_i) - G(xi_i),
    recomputed from scratch (independent of what the solver reported).

    Meaningful for a non-extrapolated solve; Richardson output satisfies
    the continuum equation better but the stencil worse."""
    rl = params.rho_lam
    g_vec = np.asarray(g_scaled(model, params, u, vg.theta1, 0.0, vg.xi,
                                n_nodes=quad_nodes))
    slopes = np.diff(vg.vbar) / np.diff(vg.xi)
    ham = u.k1_tilde * np.maximum(slopes, 1e-300) ** (-u.gamma_tilde)
    res = -rl * vg.vbar[1:] + ham + g_vec[1:]
    res0 = -rl * vg.vbar[0] + g_vec[0]
    return float(max(np.max(np.abs(res)), abs(res0)))


def _slope_from_equation(rl, u, vbar, g_vec):
    """Utilde(vbar') = (rho+lam) vbar - G solved for the slope."""
    rhs = np.maximum(rl * vbar - g_vec, 0.0)
    dvbar = np.empty_like(vbar)
    dvbar[0] = math.inf
    with np.errstate(divide="ignore"):
        dvbar[1:] = (u.k1_tilde / rhs[1:]) ** (1.0 / u.gamma_tilde)
    return dvbar


def solve_vbar(model: ReturnModel, params: MarketParams, u: PowerUtility,
               theta1: float, cfg: GridConfig = GridConfig(),
               vbar0: np.ndarray = None) -> ValueGrid:
    """Solve the stationary reduced equation at a fixed coefficient theta1."""
    if theta1 < 0.0:
        raise DomainError("theta1 must be >= 0")
    xi = geometric_grid(model.zlow, cfg)
    rl = params.rho_lam
    if theta1 == 0.0:
        # no-opportunity closed form
        a_coef = pure_consumption_coeff(params, u)
        vbar = a_coef * (xi - xi[0]) ** u.gamma
        dvbar = np.empty_like(xi)
        dvbar[0] = math.inf
        dvbar[1:] = a_coef * u.gamma * (xi[1:] - xi[0]) ** (u.gamma - 1.0)
        return ValueGrid(xi=xi, vbar=vbar, dvbar=dvbar, theta1=0.0,
                         zlow=model.zlow, gamma=u.gamma,
                         info={"residual": 0.0, "sweeps": 0, "clamped": 0})
    g_vec = np.asarray(g_scaled(model, params, u, theta1, 0.0, xi,
                                n_nodes=cfg.quad_nodes))
    vbar, resid, sweeps, clamped = _march(
        xi, g_vec, params, u, cfg.res_tol, cfg.max_sweeps, vbar0)
    info = {"residual": resid, "sweeps": sweeps, "clamped": clamped}
    if cfg.richardson:
        # the upwind stencil is first-order; the nested 2n-1 geometric grid
        # halves the log-spacing and shares every coarse node
        cfg_f = replace(cfg, n=2 * cfg.n - 1, richardson=False)
        xi_f = geometric_grid(model.zlow, cfg_f)
        g_f = np.asarray(g_scaled(model, params, u, theta1, 0.0, xi_f,
                                  n_nodes=cfg.quad_nodes))
        vbar_f, resid_f, sweeps_f, _ = _march(
            xi_f, g_f, params, u, cfg.res_tol, cfg.max_sweeps,
            np.interp(xi_f, xi, vbar))
        ext = 2.0 * vbar_f[::2] - vbar
        info.update(residual=resid_f, fine_sweeps=sweeps_f,
                    rich_delta=float(np.max(np.abs(ext - vbar_f[::2]))))
        vbar = ext
    dvbar = _slope_from_equation(rl, u, vbar, g_vec)
    return ValueGrid(xi=xi, vbar=vbar, dvbar=dvbar, theta1=theta1,
                     zlow=model.zlow, gamma=u.gamma, info=info)


def _sup_ratio(vg: ValueGrid):
    """max over the grid of xi^(-gamma) vbar(xi), with the argmax index."""
    ratio = vg.vbar / vg.xi**vg.gamma
    i = int(np.argmax(ratio))
    return float(ratio[i]), i


def _check_argmax_interior(vg: ValueGrid, i: int, flat_tol: float = 1e-5):
    ratio = vg.vbar / vg.xi**vg.gamma
    if i == len(vg.xi) - 1:
        # accept a numerically flat tail, otherwise the domain is too short
        interior_best = float(np.max(ratio[:-1]))
        if ratio[i] - interior_best > flat_tol * max(ratio[i], 1e-300):
            raise SolverError(
                "argmax of xi^(-gamma) vbar lies at xi_max; increase xi_max",
                theta1=float(ratio[i]))
        return len(vg.xi) - 2, True
    return i, False


def _secant_fixed_point(solve, cfg: GridConfig):
    """Find theta1 with T(theta1) = theta1 where T(t) = sup-ratio of the
    solve at coefficient t.  T is increasing and nearly affine in theta1
    (G is linear in it), so secant steps converge in a handful of solves;
    omega-damped plain iteration is the fallback when a secant step is
    not trustworthy.  Returns (theta1, last solve, history)."""
    theta1 = 0.0
    prev_t = prev_map = None
    history = [0.0]
    for it in range(cfg.max_fp_iters):
        out = solve(theta1)
        mapped, _ = _sup_ratio(out if isinstance(out, ValueGrid)
                               else out.slice_grid(0))
        history.append(mapped)
        if mapped > 1e6 * max(1.0, history[1]):
            raise SolverError(
                "theta1 iterates diverging; the finiteness condition "
                "rho > b*gamma + lambda*((k/zlow)^gamma - 1) is likely violated",
                theta1=mapped)
        if abs(mapped - theta1) <= cfg.fp_tol * max(abs(mapped), 1e-300):
            return theta1, out, history, it + 1
        if prev_t is not None and abs(theta1 - prev_t) > 0.0:
            slope = (mapped - prev_map) / (theta1 - prev_t)
            if slope >= 1.0:
                raise SolverError(
                    "theta1 map has slope >= 1: the fixed point is "
                    "divergent; the finiteness condition is violated",
                    theta1=mapped)
            nxt = theta1 + (mapped - theta1) / (1.0 - slope) \
                if 0.0 <= slope else mapped
        else:
            nxt = (1.0 - cfg.omega) * theta1 + cfg.omega * mapped \
                if prev_t is not None else mapped
        prev_t, prev_map = theta1, mapped
        theta1 = max(nxt, 0.0)
    raise SolverError(
        f"theta1 fixed point not converged in {cfg.max_fp_iters} iterations",
        theta1=theta1)


def fixed_point_theta1(model: ReturnModel, params: MarketParams,
                       u: PowerUtility, cfg: GridConfig = GridConfig()) -> ValueGrid:
    """Outer iteration for theta1 = sup_xi xi^(-gamma) vbar(xi), started
    from theta1 = 0 and accelerated by secant steps."""
    warm = {"vbar": None}

    def solve(theta1):
        vg = solve_vbar(model, params, u, theta1, cfg, vbar0=warm["vbar"])
        warm["vbar"] = vg.vbar
        return vg

    theta1, vg, history, iters = _secant_fixed_point(solve, cfg)
    sup, i = _sup_ratio(vg)
    i, edge_flat = _check_argmax_interior(vg, i)
    vg.theta1 = theta1
    vg.info.update(fp_iters=iters, fp_history=history,
                   argmax_index=i, argmax_edge_flat=edge_flat)
    return vg


def vhat_eval(vg: ValueGrid, u: PowerUtility, params: MarketParams,
              x: float, a: float, which: str = "value") -> float:
    """Auxiliary value vhat(x, a) = a^gamma vbar(x/a) or its x-derivative
    a^(gamma-1) vbar'(x/a).

    The a = 0 case is routed to the no-opportunity closed form."""
    if a < 0.0:
        raise DomainError("negative allocations are not supported here")
    if a == 0.0:
        a_coef = pure_consumption_coeff(params, u)
        if which == "value":
            return a_coef * x**u.gamma
        return a_coef * u.gamma * x ** (u.gamma - 1.0) if x > 0 else math.inf
    floor = a * vg.zlow
    if x < floor - 1e-12 * max(1.0, floor):
        raise DomainError("x must be >= l(a)")
    xi = min(max(x / a, vg.zlow), vg.xi[-1])
    if which == "value":
        return a**u.gamma * float(vg.value_at(xi))
    if which == "dvalue_dx":
        return a ** (u.gamma - 1.0) * float(vg.slope_at(xi))
    raise ValueError(f"unknown selector {which!r}")
