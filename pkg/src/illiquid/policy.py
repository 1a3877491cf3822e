"""Executable controls derived from a converged value function.

At each trading date the optimal allocation is a* = x/xi_star where
xi_star maximizes xi^(-gamma) * vbar(0, xi); between trades consumption
follows the feedback map c = I(dvhat/dx).  One template wealth path at
(x0 = xi_star, a = 1) is stored and rescaled by positive homogeneity
instead of re-solving the ODE per trade.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .bvp import ConsumptionPath, solve_bvp
from .market import (DomainError, MarketParams, PowerUtility, ReturnModel,
                     l_bound)
from .nonstationary import ValueSurface, vhat_eval_ns
from .stationary import ValueGrid, vhat_eval


def _zero_slice(value):
    """The t = 0 reduced value on its xi grid."""
    if isinstance(value, ValueSurface):
        return value.xi, value.vbar[0]
    return value.xi, value.vbar


def _vbar0_at(value, xi):
    if isinstance(value, ValueSurface):
        return value.value_at(0.0, xi)
    return value.value_at(xi)


def locate_xi_star(value, u: PowerUtility,
                   xtol: float = 1e-10) -> tuple[float, bool]:
    """Argmax of xi^(-gamma) vbar(0, xi), refined by bounded scalar search
    between the grid nodes bracketing the discrete argmax.

    Returns (xi_star, tie_flag); ties on the grid break toward smaller xi.
    """
    xi, vb = _zero_slice(value)
    ratio = vb / xi ** u.gamma
    best = float(np.max(ratio))
    hits = np.where(np.isclose(ratio, best, rtol=1e-12, atol=0.0))[0]
    k = int(hits[0])
    tie = hits.size > 1 and (np.diff(hits) > 1).any()
    lo = xi[max(k - 1, 0)]
    hi = xi[min(k + 1, len(xi) - 1)]
    if hi <= lo:
        return float(xi[k]), tie
    res = minimize_scalar(lambda s: -_vbar0_at(value, s) / s ** u.gamma,
                          bounds=(lo, hi), method="bounded",
                          options={"xatol": xtol * xi[k]})
    return float(res.x), tie


@dataclass
class Policy:
    xi_star: float
    pi_star: float
    theta1: float
    tie_flag: bool
    path_template: ConsumptionPath | None = None
    info: dict = field(default_factory=dict)

    def report(self) -> str:
        lines = [
            f"xi_star  = {self.xi_star:.12g}",
            f"pi_star  = {self.pi_star:.12g}",
            f"theta1   = {self.theta1:.12g}",
        ]
        if self.tie_flag:
            lines.append("note: non-adjacent argmax tie on the grid; "
                         "smallest xi kept")
        return "\n".join(lines)


def build_policy(value, model: ReturnModel, params: MarketParams,
                 u: PowerUtility, with_template: bool = True,
                 **bvp_kwargs) -> Policy:
    xi_star, tie = locate_xi_star(value, u)
    template = None
    if with_template:
        template = solve_bvp(value, model, params, u, x0=xi_star, a=1.0,
                             **bvp_kwargs)
    return Policy(xi_star=xi_star, pi_star=1.0 / xi_star,
                  theta1=value.theta1, tie_flag=tie,
                  path_template=template)


def optimal_allocation(policy: Policy, x: float) -> float:
    """a* = x / xi_star; exactly positively homogeneous in x."""
    if x < 0.0:
        raise DomainError("wealth must be nonnegative at a trade date")
    return x / policy.xi_star


def feedback_rate(value, u: PowerUtility, params: MarketParams, t: float,
                  x: float, a: float, model: ReturnModel | None = None) -> float:
    """Feedback consumption c = I(dvhat/dx(t, x, a)); zero at the wealth
    floor, where the marginal value blows up."""
    floor = l_bound(a, model) if (model is not None and a != 0.0) else \
        (0.0 if a == 0.0 else None)
    if floor is None:
        # fall back to the grid's own floor: x/a must sit above zlow
        floor = a * value.zlow if a > 0.0 else 0.0
    if x < floor - 1e-12 * max(1.0, abs(floor)):
        raise DomainError("wealth below the admissibility floor l(a)")
    if x <= floor:
        return 0.0
    if isinstance(value, ValueSurface):
        slope = vhat_eval_ns(value, u, params, t, x, a, which="dvalue_dx")
    else:
        slope = vhat_eval(value, u, params, x, a, which="dvalue_dx")
    if not np.isfinite(slope):
        return 0.0
    return float(u.inverse_marginal(slope))
