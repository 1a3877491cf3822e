"""Monte Carlo validation of the discrete-trade consumption problem.

Trading dates are Poisson arrivals; between them the agent consumes along
the policy's template path, rescaled by positive homogeneity (wealth at a
trade date enters multiplicatively, so each path is a cumulative product
of per-interval factors).  Per-path randomness comes from a counter-based
Philox generator keyed by (seed, path index), so serial and threaded runs
produce identical draws path by path.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .market import (BlackScholes, DiscreteStationary, DomainError,
                     FrozenLognormal, MarketParams, PowerUtility,
                     ReturnModel)
from .policy import Policy

try:
    from scipy.integrate import cumulative_simpson as _cumsimp
except ImportError:  # scipy < 1.12
    def _cumsimp(y, x=None, initial=0.0):
        h = x[1] - x[0]
        n = len(y)
        out = np.empty(n)
        out[0] = initial
        if n > 1:
            # composite Simpson on even pairs, quadratic correction on odd
            out[1] = initial + h * (5 * y[0] + 8 * y[1] - y[2]) / 12.0 \
                if n > 2 else initial + 0.5 * h * (y[0] + y[1])
            for i in range(2, n):
                out[i] = out[i - 2] + h * (y[i - 2] + 4 * y[i - 1] + y[i]) / 3.0
        return out


@dataclass
class SimPath:
    trade_times: np.ndarray        # tau_k, k >= 1 (tau_0 = 0 implicit)
    returns: np.ndarray            # Z_k aligned with trade_times
    allocations: np.ndarray        # alpha_k chosen at tau_{k-1}
    wealth: np.ndarray             # X_k at trade dates, starting with x0
    realized_utility: float
    info: dict = field(default_factory=dict)


@dataclass
class SimResult:
    n_paths: int
    mean: float
    se: float
    value_prediction: float
    truncation_bound: float
    baseline_mean: float
    baseline_se: float
    info: dict = field(default_factory=dict)

    def csv_row(self) -> str:
        cols = (self.n_paths, self.mean, self.se, self.value_prediction,
                self.truncation_bound, self.baseline_mean, self.baseline_se)
        return ",".join(f"{v:.17g}" if isinstance(v, float) else str(v)
                        for v in cols)

    csv_header = ("n_paths,mean,se,value_prediction,truncation_bound,"
                  "baseline_mean,baseline_se")


def path_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def sample_market(rng: np.random.Generator, model: ReturnModel,
                  params: MarketParams, t_sim: float):
    """Trade times (Poisson arrivals in (0, t_sim]) and one return per
    trade, drawn from the interarrival-conditional distribution."""
    if t_sim <= 0.0:
        raise DomainError("t_sim must be positive")
    # overshoot the expected count, then extend if a long path needs it
    n_guess = max(16, int(params.lam * t_sim + 6.0 * math.sqrt(params.lam * t_sim)))
    gaps = rng.exponential(1.0 / params.lam, size=n_guess)
    while gaps.sum() <= t_sim:
        gaps = np.concatenate([gaps, rng.exponential(1.0 / params.lam,
                                                     size=n_guess)])
    taus = np.cumsum(gaps)
    keep = taus <= t_sim
    taus, gaps = taus[keep], gaps[keep]
    zs = model.sample(rng, gaps)
    return taus, zs


class _Template:
    """Unit-allocation consumption template with cumulative discounted
    utility, ready for homogeneous rescaling."""

    def __init__(self, policy: Policy, params: MarketParams,
                 u: PowerUtility):
        tpl = policy.path_template
        if tpl is None:
            raise DomainError("policy was built without a path template")
        if abs(tpl.a - 1.0) > 1e-14:
            raise DomainError("template must be solved at unit allocation")
        self.s = tpl.s
        self.y = tpl.y
        integrand = np.exp(-params.rho * tpl.s) * np.asarray(u.u(tpl.c))
        self.cum_u = _cumsimp(integrand, x=tpl.s, initial=0.0)
        self.horizon = tpl.s[-1]
        self.c0 = tpl.c0
        self.xi_star = policy.xi_star
        self.floor = tpl.floor   # = zlow at unit allocation
        self.gamma = u.gamma
        self.k1 = u.k1
        self.rho = params.rho

    def wealth_at(self, dt):
        return np.interp(dt, self.s, self.y)

    def utility_to(self, dt):
        return np.interp(dt, self.s, self.cum_u)

    def interval_factors(self, gaps, zs):
        """Per-interval wealth multipliers X_{k+1}/X_k and the discounted
        utility coefficients, for the optimal and constant-rate policies."""
        y_end = self.wealth_at(gaps)
        fac_opt = (y_end + zs) / self.xi_star
        u_opt = self.utility_to(gaps) / self.xi_star ** self.gamma

        # baseline: hold the initial optimal rate constant, stop at the floor
        s_hit = (self.xi_star - self.floor) / self.c0
        live = np.minimum(gaps, s_hit)
        u_base = self.k1 * self.c0 ** self.gamma \
            * (1.0 - np.exp(-self.rho * live)) / self.rho \
            / self.xi_star ** self.gamma
        y_base = np.maximum(self.xi_star - self.c0 * gaps, self.floor)
        fac_base = (y_base + zs) / self.xi_star
        return fac_opt, u_opt, fac_base, u_base


def simulate_path(rng: np.random.Generator, policy: Policy, model: ReturnModel,
                  params: MarketParams, u: PowerUtility, x0: float,
                  t_sim: float, draws=None, _tpl=None) -> SimPath:
    """One path under the optimal policy.  `draws = (taus, zs)` overrides
    the market sampling (used for forced scenarios in tests)."""
    if x0 < 0.0:
        raise DomainError("x0 must be nonnegative")
    if _tpl is None:
        _tpl = _Template(policy, params, u)
    tpl = _tpl
    if draws is None:
        taus, zs = sample_market(rng, model, params, t_sim)
    else:
        taus, zs = (np.asarray(v, dtype=float) for v in draws)
    if x0 == 0.0:
        return SimPath(taus, zs, np.zeros_like(taus),
                       np.zeros(len(taus) + 1), 0.0,
                       info={"x_end": 0.0, "baseline_utility": 0.0})

    gaps = np.diff(np.concatenate([[0.0], taus]))
    fac, u_coef, fac_b, u_coef_b = tpl.interval_factors(gaps, zs)

    x = np.empty(len(taus) + 1)
    x[0] = x0
    x[1:] = x0 * np.cumprod(fac)
    xb = np.empty_like(x)
    xb[0] = x0
    xb[1:] = x0 * np.cumprod(fac_b)
    disc = np.exp(-params.rho * np.concatenate([[0.0], taus]))

    g = u.gamma
    tail = t_sim - (taus[-1] if len(taus) else 0.0)
    util = float(np.sum(disc[:-1] * x[:-1] ** g * u_coef)) if len(taus) else 0.0
    util += disc[-1] * x[-1] ** g * tpl.utility_to(tail) / tpl.xi_star ** g
    util_b = float(np.sum(disc[:-1] * xb[:-1] ** g * u_coef_b)) if len(taus) else 0.0
    s_hit = (tpl.xi_star - tpl.floor) / tpl.c0
    util_b += disc[-1] * xb[-1] ** g * tpl.k1 * tpl.c0 ** g \
        * (1.0 - math.exp(-params.rho * min(tail, s_hit))) / params.rho \
        / tpl.xi_star ** g

    x_end = x[-1] * tpl.wealth_at(tail) / tpl.xi_star
    allocs = x[:-1] / tpl.xi_star
    return SimPath(trade_times=taus, returns=zs, allocations=allocs,
                   wealth=x, realized_utility=util,
                   info={"x_end": float(x_end),
                         "baseline_utility": float(util_b),
                         "x_end_baseline":
                             float(xb[-1] * max(1.0 - tpl.c0 * tail
                                                / tpl.xi_star,
                                                tpl.floor / tpl.xi_star))})


def monte_carlo(seed: int, n_paths: int, policy: Policy, model: ReturnModel,
                params: MarketParams, u: PowerUtility, x0: float,
                t_sim: float, threads: int = 1,
                collect_paths: bool = False) -> SimResult:
    """Mean realized discounted utility against the value prediction
    theta1 * x0^gamma, with a constant-rate baseline run on the same
    draws (common random numbers)."""
    if n_paths < 100:
        raise DomainError("n_paths must be at least 100")
    utils = np.empty(n_paths)
    utils_b = np.empty(n_paths)
    tails = np.empty(n_paths)
    paths = [None] * n_paths if collect_paths else None
    tpl = _Template(policy, params, u)

    def run_block(indices):
        for i in indices:
            p = simulate_path(path_rng(seed, i), policy, model, params, u,
                              x0, t_sim, _tpl=tpl)
            utils[i] = p.realized_utility
            utils_b[i] = p.info["baseline_utility"]
            tails[i] = p.info["x_end"]
            if paths is not None:
                paths[i] = p

    if threads > 1:
        chunks = np.array_split(np.arange(n_paths), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_block, chunks))
    else:
        run_block(range(n_paths))

    theta1 = policy.theta1
    trunc = math.exp(-params.rho * t_sim) * theta1 \
        * float(np.mean(tails ** u.gamma))
    mean = float(np.mean(utils))
    se = float(np.std(utils, ddof=1) / math.sqrt(n_paths))
    info = {"seed": seed, "t_sim": t_sim, "x0": x0}
    if paths is not None:
        info["paths"] = paths
    return SimResult(n_paths=n_paths, mean=mean, se=se,
                     value_prediction=theta1 * x0 ** u.gamma,
                     truncation_bound=trunc,
                     baseline_mean=float(np.mean(utils_b)),
                     baseline_se=float(np.std(utils_b, ddof=1)
                                       / math.sqrt(n_paths)),
                     info=info)
