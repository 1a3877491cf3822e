"""Problem data for the illiquid-market consumption problem.

Holds the power utility, the market parameters (discount rate rho and
Poisson trade intensity lambda), and the conditional return distribution
p(t, dz) together with the quadrature, the admissibility floor l(a) and
the standing-assumption check used by the solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class NumericsError(RuntimeError):
    """A numerical evaluation produced a non-finite or unusable result."""


# ---------------------------------------------------------------------------
# utility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerUtility:
    """U(x) = k1 * x**gamma on [0, inf), 0 < gamma < 1.

    Derived quantities:
      gamma_tilde = gamma / (1 - gamma)
      k1_tilde    = (1 - gamma) * gamma**gamma_tilde * k1**(1/(1-gamma))
    so that the convex conjugate is Utilde(y) = k1_tilde * y**(-gamma_tilde)
    and the inverse marginal is I(y) = (k1*gamma / y)**(1/(1-gamma)).
    """

    k1: float = 1.0
    gamma: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise DomainError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.k1 <= 0.0:
            raise DomainError(f"k1 must be positive, got {self.k1}")

    @property
    def gamma_tilde(self) -> float:
        return self.gamma / (1.0 - self.gamma)

    @property
    def k1_tilde(self) -> float:
        g = self.gamma
        return (1.0 - g) * g ** (g / (1.0 - g)) * self.k1 ** (1.0 / (1.0 - g))

    def u(self, x):
        """U(x); U(0) = 0."""
        x = np.asarray(x, dtype=float)
        if np.any(x < 0.0):
            raise DomainError("utility argument must be nonnegative")
        return self.k1 * x**self.gamma

    def marginal(self, c):
        """U'(c) = k1*gamma*c**(gamma-1), c > 0."""
        c = np.asarray(c, dtype=float)
        if np.any(c <= 0.0):
            raise DomainError("marginal utility requires c > 0")
        return self.k1 * self.gamma * c ** (self.gamma - 1.0)

    def marginal2(self, c):
        """U''(c) < 0, c > 0."""
        c = np.asarray(c, dtype=float)
        if np.any(c <= 0.0):
            raise DomainError("U'' requires c > 0")
        return self.k1 * self.gamma * (self.gamma - 1.0) * c ** (self.gamma - 2.0)

    def inverse_marginal(self, y):
        """I(y) = (U')^{-1}(y), y > 0."""
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0.0):
            raise DomainError("inverse marginal requires y > 0")
        return (self.k1 * self.gamma / y) ** (1.0 / (1.0 - self.gamma))

    def conjugate(self, y):
        """Utilde(y) = sup_x [U(x) - x*y], y > 0."""
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0.0):
            raise DomainError("conjugate requires y > 0")
        return self.k1_tilde * y ** (-self.gamma_tilde)


def utility_eval(u: PowerUtility, which: str, arg: float) -> float:
    """Dispatch evaluation of U, U', U'', I or Utilde at a scalar argument."""
    table = {
        "U": u.u,
        "U'": u.marginal,
        "U''": u.marginal2,
        "I": u.inverse_marginal,
        "Utilde": u.conjugate,
    }
    try:
        fn = table[which]
    except KeyError:
        raise ValueError(f"unknown selector {which!r}") from None
    return float(fn(arg))


# ---------------------------------------------------------------------------
# market parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarketParams:
    rho: float
    lam: float

    def __post_init__(self):
        if self.rho <= 0.0:
            raise DomainError(f"rho must be positive, got {self.rho}")
        if self.lam <= 0.0:
            raise DomainError(f"lambda must be positive, got {self.lam}")

    @property
    def rho_lam(self) -> float:
        return self.rho + self.lam


# ---------------------------------------------------------------------------
# return distributions p(t, dz)
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _gauss_hermite(n: int):
    # nodes/weights for E[f(N(0,1))] = sum w_i f(sqrt(2) x_i)
    x, w = np.polynomial.hermite.hermgauss(n)
    return math.sqrt(2.0) * x, w / math.sqrt(math.pi)


class ReturnModel:
    """Conditional distribution of the observed return Z given the
    interarrival time t, with support bounds (-zlow, zhigh)."""

    zlow: float
    zhigh: float

    @property
    def stationary(self) -> bool:
        raise NotImplementedError

    def expect(self, t: float, w, n_nodes: int = 64) -> float:
        """integral of w(z) p(t, dz); w must accept numpy arrays."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, dt, size=None):
        """Draw returns conditionally on interarrival time(s) dt."""
        raise NotImplementedError

    def growth_constants(self):
        """Constants (k, b) with E[1+Z(t)] <= k * exp(b*t)."""
        raise NotImplementedError


@dataclass(frozen=True)
class BlackScholes(ReturnModel):
    """Z(t) = exp((b - sigma^2/2) t + sigma W_t) - 1, support (-1, inf)."""

    b: float = 0.4
    sigma: float = 1.0
    zlow: float = field(default=1.0, init=False)
    zhigh: float = field(default=math.inf, init=False)

    def __post_init__(self):
        if self.b < 0.0:
            raise DomainError("drift b must be >= 0")
        if self.sigma <= 0.0:
            raise DomainError("sigma must be > 0")

    @property
    def stationary(self) -> bool:
        return False

    def expect(self, t: float, w, n_nodes: int = 64) -> float:
        if t < 0.0:
            raise DomainError("time must be >= 0")
        if t == 0.0:
            return float(np.asarray(w(np.array([0.0])))[0])
        x, wts = _gauss_hermite(n_nodes)
        mu = (self.b - 0.5 * self.sigma**2) * t
        s = self.sigma * math.sqrt(t)
        vals = np.asarray(w(np.exp(mu + s * x) - 1.0), dtype=float)
        out = float(np.dot(wts, vals))
        if not math.isfinite(out):
            raise NumericsError(
                "Gauss-Hermite quadrature non-finite; integrand grows too fast"
            )
        return out

    def sample(self, rng, dt, size=None):
        dt = np.asarray(dt, dtype=float)
        mu = (self.b - 0.5 * self.sigma**2) * dt
        s = self.sigma * np.sqrt(dt)
        return np.exp(rng.normal(mu, s, size=size)) - 1.0

    def growth_constants(self):
        # E[1+Z(t)] = exp(b t) exactly
        return 1.0, self.b


@dataclass(frozen=True)
class FrozenLognormal(ReturnModel):
    """Stationary model: the Black-Scholes return distribution frozen at t0."""

    t0: float
    b: float = 0.4
    sigma: float = 1.0
    zlow: float = field(default=1.0, init=False)
    zhigh: float = field(default=math.inf, init=False)

    def __post_init__(self):
        if self.t0 <= 0.0:
            raise DomainError("freeze time t0 must be > 0")
        if self.b < 0.0 or self.sigma <= 0.0:
            raise DomainError("need b >= 0 and sigma > 0")

    @property
    def stationary(self) -> bool:
        return True

    def _bs(self) -> BlackScholes:
        return BlackScholes(b=self.b, sigma=self.sigma)

    def expect(self, t: float, w, n_nodes: int = 64) -> float:
        return self._bs().expect(self.t0, w, n_nodes=n_nodes)

    def sample(self, rng, dt, size=None):
        dt = np.asarray(dt, dtype=float)
        return self._bs().sample(rng, np.full_like(dt, self.t0), size=size)

    def growth_constants(self):
        # stationary distribution: the bound must hold uniformly in t
        return math.exp(self.b * self.t0), 0.0


@dataclass(frozen=True)
class DiscreteStationary(ReturnModel):
    """Finite-support stationary return distribution."""

    points: tuple
    probs: tuple
    zlow: float = None
    zhigh: float = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        pr = np.asarray(self.probs, dtype=float)
        if pts.ndim != 1 or pts.shape != pr.shape or pts.size == 0:
            raise DomainError("points and probs must be equal-length 1-d sequences")
        if np.any(pr < 0.0) or abs(pr.sum() - 1.0) > 1e-12:
            raise DomainError("probs must be nonnegative and sum to 1 within 1e-12")
        if np.any(pts <= -1.0):
            raise DomainError("returns must lie in (-1, inf)")
        object.__setattr__(self, "points", tuple(pts))
        object.__setattr__(self, "probs", tuple(pr))
        zlow = -min(pts) if self.zlow is None else float(self.zlow)
        zhigh = max(pts) if self.zhigh is None else float(self.zhigh)
        if not (0.0 < zlow <= 1.0):
            raise DomainError("zlow must lie in (0, 1]")
        if zhigh <= 0.0:
            raise DomainError("zhigh must be positive")
        if np.any(pts < -zlow - 1e-15) or np.any(pts > zhigh + 1e-15):
            raise DomainError("all points must lie in [-zlow, zhigh]")
        object.__setattr__(self, "zlow", zlow)
        object.__setattr__(self, "zhigh", zhigh)
        if float(np.dot(pts, pr)) < -1e-15:
            raise DomainError("mean return must be nonnegative")

    @property
    def stationary(self) -> bool:
        return True

    def expect(self, t: float, w, n_nodes: int = 64) -> float:
        vals = np.asarray(w(np.asarray(self.points)), dtype=float)
        return float(np.dot(np.asarray(self.probs), vals))

    def sample(self, rng, dt, size=None):
        dt = np.asarray(dt, dtype=float)
        if size is None:
            size = dt.shape
        idx = rng.choice(len(self.points), size=size, p=np.asarray(self.probs))
        return np.asarray(self.points)[idx]

    def growth_constants(self):
        k = float(np.dot(1.0 + np.asarray(self.points), np.asarray(self.probs)))
        return k, 0.0


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def l_bound(a: float, model: ReturnModel) -> float:
    """Admissibility floor l(a) = max(a*zlow, -a*zhigh).

    With zhigh = +inf the allocation must be nonnegative and l(a) = a*zlow.
    """
    if a == 0.0:
        return 0.0
    if math.isinf(model.zhigh):
        if a < 0.0:
            raise DomainError("a must be >= 0 when the return support is unbounded")
        return a * model.zlow
    return max(a * model.zlow, -a * model.zhigh)


def expect_under_p(model: ReturnModel, t: float, w, n_nodes: int = 64) -> float:
    """integral of w(z) p(t, dz)."""
    return model.expect(t, w, n_nodes=n_nodes)


def g_scaled(model: ReturnModel, params: MarketParams, u: PowerUtility,
             theta1: float, t: float, xi, n_nodes: int = 64):
    """lambda * theta1 * E[(xi + Z(t))^gamma], defined for xi >= zlow.

    Vectorized over xi. The integrand is bounded on the support since
    xi + z >= xi - zlow >= 0 and gamma > 0.
    """
    xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
    if np.any(xi_arr < model.zlow - 1e-12):
        raise DomainError("xi must be >= zlow")
    if theta1 < 0.0:
        raise DomainError("theta1 must be >= 0")
    if theta1 == 0.0:
        out = np.zeros_like(xi_arr)
    else:
        gam = u.gamma
        col = xi_arr[:, None]

        def integrand(z):
            return np.maximum(col + z[None, :], 0.0) ** gam

        if isinstance(model, DiscreteStationary):
            z = np.asarray(model.points)
            vals = integrand(z) @ np.asarray(model.probs)
        else:
            bs = model._bs() if isinstance(model, FrozenLognormal) else model
            tt = model.t0 if isinstance(model, FrozenLognormal) else t
            if tt <= 0.0:
                vals = xi_arr**gam
            else:
                x, wts = _gauss_hermite(n_nodes)
                mu = (bs.b - 0.5 * bs.sigma**2) * tt
                s = bs.sigma * math.sqrt(tt)
                z = np.exp(mu + s * x) - 1.0
                vals = integrand(z) @ wts
        out = params.lam * theta1 * vals
        if not np.all(np.isfinite(out)):
            raise NumericsError("g quadrature produced non-finite values")
    return out if np.ndim(xi) else float(out[0])


def g_scaled_dx(model: ReturnModel, params: MarketParams, u: PowerUtility,
                theta1: float, t: float, x: float, a: float,
                n_nodes: int = 64) -> float:
    """d/dx of g(t, x, a) = lambda*theta1*E[(x + a Z(t))^gamma].

    Equals lambda*theta1*gamma*E[(x + a Z)^(gamma-1)].  The exponent
    gamma-1 in (-1, 0) gives an integrable singularity at the floor; the
    integrand is floored at a small positive level for safety.
    """
    if theta1 == 0.0:
        return 0.0
    gam = u.gamma
    floor = 1e-300

    def integrand(z):
        base = np.maximum(x + a * z, floor)
        return base ** (gam - 1.0)

    val = model.expect(t, integrand, n_nodes=n_nodes)
    return params.lam * theta1 * gam * val


def bs_density(b: float, sigma: float, t: float, z, which: str = "f"):
    """Lognormal return density f(t, z) of the Black-Scholes model, or its
    partial derivatives in t and z (analytic, consistent with finite
    differences of f)."""
    z_arr = np.asarray(z, dtype=float)
    if t <= 0.0:
        raise DomainError("t must be > 0")
    if np.any(z_arr <= -1.0):
        raise DomainError("z must be > -1")
    zp1 = z_arr + 1.0
    m = np.log(zp1) - (b - 0.5 * sigma**2) * t
    f = np.exp(-m**2 / (2.0 * sigma**2 * t)) / (sigma * math.sqrt(2.0 * math.pi * t) * zp1)
    if which == "f":
        out = f
    elif which == "df_dz":
        out = f / zp1 * (-1.0 - m / (sigma**2 * t))
    elif which == "df_dt":
        drift = b - 0.5 * sigma**2
        out = f * (-0.5 / t
                   + np.log(zp1) ** 2 / (2.0 * sigma**2 * t**2)
                   - drift**2 / (2.0 * sigma**2))
    else:
        raise ValueError(f"unknown selector {which!r}")
    return out if np.ndim(z) else float(out)


@dataclass(frozen=True)
class AssumptionReport:
    rhs: float
    k: float
    b: float
    flag: str          # "pass" | "borderline" | "fail"
    message: str

    @property
    def ok(self) -> bool:
        return self.flag != "fail"


def validate_assumptions(model: ReturnModel, params: MarketParams,
                         u: PowerUtility) -> AssumptionReport:
    """Check the finiteness condition rho > b*gamma + lambda*((k/zlow)^gamma - 1).

    Equality within 1e-12 is flagged "borderline" (solvers proceed with a
    warning); violation is flagged "fail"."""
    k, b = model.growth_constants()
    rhs = b * u.gamma + params.lam * ((k / model.zlow) ** u.gamma - 1.0)
    gap = params.rho - rhs
    if abs(gap) <= 1e-12:
        flag = "borderline"
        msg = "rho equals the growth bound exactly; value may be marginally finite"
    elif gap > 0.0:
        flag = "pass"
        msg = "strict finiteness condition holds"
    else:
        flag = "fail"
        msg = "finiteness condition violated; the value function may be infinite"
    return AssumptionReport(rhs=rhs, k=k, b=b, flag=flag, message=msg)
