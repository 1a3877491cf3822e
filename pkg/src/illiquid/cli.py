"""Batch driver: validate assumptions, solve value functions, extract
consumption paths, and run Monte Carlo checks from a TOML config.

Exit codes: 0 success, 1 usage/config error, 2 borderline assumptions,
3 failed assumptions, 4 solver non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .bvp import optimality_gap, solve_bvp
from .market import (BlackScholes, DiscreteStationary, DomainError,
                     FrozenLognormal, MarketParams, PowerUtility, l_bound,
                     validate_assumptions)
from .nonstationary import fixed_point_theta1_ns
from .policy import build_policy
from .simulate import SimResult, monte_carlo
from .stationary import GridConfig, SolverError, fixed_point_theta1

_SCHEMA = {
    "model": {"kind", "b", "sigma", "points", "probs", "zlow", "zhigh", "t0"},
    "params": {"rho", "lambda"},
    "utility": {"K1", "gamma"},
    "solver": {"n_xi", "Xi_max", "Tmax", "res_tol", "fp_tol", "max_fp_iters",
               "max_sweeps", "omega", "quad_nodes", "cfl"},
    "bvp": {"x0", "a", "horizon", "n_out"},
    "sim": {"seed", "n_paths", "T_sim"},
    "output": {"prefix"},
}


class ConfigError(ValueError):
    pass


class RunConfig:
    """Validated config: model/params/utility objects plus raw sections."""

    def __init__(self, raw: dict, source_bytes: bytes):
        for section, keys in raw.items():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            if not isinstance(keys, dict):
                raise ConfigError(f"[{section}] must be a table")
            extra = set(keys) - _SCHEMA[section]
            if extra:
                raise ConfigError(
                    f"unknown keys in [{section}]: {', '.join(sorted(extra))}")
        self.raw = raw
        self.hash = hashlib.sha256(source_bytes).hexdigest()[:12]
        try:
            self.model = self._build_model(raw.get("model", {}))
            p = raw.get("params", {})
            self.params = MarketParams(rho=float(p.get("rho", 0.2)),
                                       lam=float(p.get("lambda", 2.0)))
            util = raw.get("utility", {})
            self.u = PowerUtility(k1=float(util.get("K1", 1.0)),
                                  gamma=float(util.get("gamma", 0.5)))
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        self.solver = raw.get("solver", {})
        self.bvp = raw.get("bvp", {})
        self.sim = raw.get("sim", {})
        self.prefix = raw.get("output", {}).get("prefix", "")

    @staticmethod
    def _build_model(sec: dict):
        kind = sec.get("kind", "black_scholes")
        if kind == "black_scholes":
            return BlackScholes(b=float(sec.get("b", 0.4)),
                                sigma=float(sec.get("sigma", 1.0)))
        if kind == "frozen_lognormal":
            return FrozenLognormal(t0=float(sec.get("t0", 3.0)),
                                   b=float(sec.get("b", 0.4)),
                                   sigma=float(sec.get("sigma", 1.0)))
        if kind == "discrete":
            if "points" not in sec or "probs" not in sec:
                raise ConfigError("discrete model needs points and probs")
            return DiscreteStationary(
                points=tuple(float(v) for v in sec["points"]),
                probs=tuple(float(v) for v in sec["probs"]),
                zlow=sec.get("zlow"), zhigh=sec.get("zhigh"))
        raise ConfigError(f"unknown model kind {kind!r}")

    def grid_config(self) -> GridConfig:
        s = self.solver
        kw = {}
        if "n_xi" in s:
            kw["n"] = int(s["n_xi"])
        if "Xi_max" in s:
            kw["xi_max"] = float(s["Xi_max"])
        for src, dst in (("res_tol", "res_tol"), ("fp_tol", "fp_tol"),
                         ("omega", "omega"), ("cfl", "cfl")):
            if src in s:
                kw[dst] = float(s[src])
        for src, dst in (("max_fp_iters", "max_fp_iters"),
                         ("max_sweeps", "max_sweeps"),
                         ("quad_nodes", "quad_nodes")):
            if src in s:
                kw[dst] = int(s[src])
        return GridConfig(**kw)

    def tmax(self):
        t = self.solver.get("Tmax")
        return float(t) if t is not None else None


def load_config(path: str) -> RunConfig:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        raw = tomllib.loads(data.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    return RunConfig(raw, data)


def _header(cfg: RunConfig) -> str:
    return f"# config_hash={cfg.hash} version={__version__}"


def _solve_value(cfg: RunConfig):
    gcfg = cfg.grid_config()
    if cfg.model.stationary:
        return fixed_point_theta1(cfg.model, cfg.params, cfg.u, gcfg)
    return fixed_point_theta1_ns(cfg.model, cfg.params, cfg.u, gcfg,
                                 tmax=cfg.tmax())


def cmd_validate(cfg: RunConfig, out: Path, args) -> int:
    report = validate_assumptions(cfg.model, cfg.params, cfg.u)
    print(report.message)
    print(f"rhs={report.rhs:.12g} rho={cfg.params.rho:.12g} "
          f"k={report.k:.12g} b={report.b:.12g}")
    return {"pass": 0, "borderline": 2, "fail": 3}[report.flag]


def _gate_assumptions(cfg: RunConfig) -> int | None:
    report = validate_assumptions(cfg.model, cfg.params, cfg.u)
    if report.flag == "fail":
        print(report.message, file=sys.stderr)
        return 3
    if report.flag == "borderline":
        print(f"warning: {report.message}", file=sys.stderr)
    return None


def cmd_solve(cfg: RunConfig, out: Path, args) -> int:
    gate = _gate_assumptions(cfg)
    if gate is not None:
        return gate
    value = _solve_value(cfg)
    stem = cfg.prefix + ("value" if cfg.model.stationary else "value_surface")
    csv_path = out / f"{stem}.csv"
    value.to_csv(csv_path, extra_comment=_header(cfg).lstrip("# "))
    policy = build_policy(value, cfg.model, cfg.params, cfg.u,
                          with_template=False)
    print(policy.report())
    (out / f"{cfg.prefix}policy.txt").write_text(policy.report() + "\n")
    print(f"wrote {csv_path}")
    return 0


def _baseline_rate(x0, floor, params, u):
    return (x0 - floor) * params.rho_lam / (1.0 - u.gamma)


def _crossings(c, c_base) -> int:
    d = c - c_base
    live = np.abs(c) + np.abs(c_base) > 0.0
    sign = np.sign(d[live])
    sign = sign[sign != 0]
    return int(np.sum(sign[1:] != sign[:-1]))


def cmd_path(cfg: RunConfig, out: Path, args) -> int:
    gate = _gate_assumptions(cfg)
    if gate is not None:
        return gate
    value = _solve_value(cfg)
    policy = build_policy(value, cfg.model, cfg.params, cfg.u,
                          with_template=False)
    x0 = float(cfg.bvp.get("x0", 1.0))
    a_raw = cfg.bvp.get("a", "optimal")
    a = x0 / policy.xi_star if a_raw == "optimal" else float(a_raw)
    horizon = cfg.bvp.get("horizon")
    n_out = int(cfg.bvp.get("n_out", 2048))
    path = solve_bvp(value, cfg.model, cfg.params, cfg.u, x0=x0, a=a,
                     horizon=None if horizon is None else float(horizon),
                     n_out=n_out)
    gaps = optimality_gap(path, value, cfg.params, cfg.u)
    csv_path = out / f"{cfg.prefix}path.csv"
    path.to_csv(csv_path, params=cfg.params, u=cfg.u, gaps=gaps,
                extra_comment=_header(cfg).lstrip("# "))
    rate = cfg.params.rho_lam / (1.0 - cfg.u.gamma)
    c0_base = _baseline_rate(x0, path.floor, cfg.params, cfg.u)
    c_base = c0_base * np.exp(-rate * path.s)
    n_cross = _crossings(path.c, c_base)
    print(f"wrote {csv_path}")
    print(f"c0={path.c0:.12g} classification={path.classification} "
          f"baseline_crossings={n_cross}")

    # time-dependent model: add the distribution-frozen-at-t0 comparison
    if isinstance(cfg.model, BlackScholes):
        t0 = float(cfg.raw.get("model", {}).get("t0", 3.0))
        frozen = FrozenLognormal(t0=t0, b=cfg.model.b, sigma=cfg.model.sigma)
        from .stationary import solve_vbar
        vg = solve_vbar(frozen, cfg.params, cfg.u, value.theta1,
                        cfg.grid_config())
        path_f = solve_bvp(vg, frozen, cfg.params, cfg.u, x0=x0, a=a,
                           horizon=None if horizon is None else float(horizon),
                           n_out=n_out)
        csv_f = out / f"{cfg.prefix}path_frozen.csv"
        path_f.to_csv(csv_f, params=cfg.params, u=cfg.u,
                      extra_comment=_header(cfg).lstrip("# "))
        print(f"wrote {csv_f}")
        print(f"c0_frozen={path_f.c0:.12g} "
              f"slower_at_s0={path_f.c0 < path.c0}")
    return 0


def cmd_simulate(cfg: RunConfig, out: Path, args) -> int:
    gate = _gate_assumptions(cfg)
    if gate is not None:
        return gate
    value = _solve_value(cfg)
    policy = build_policy(value, cfg.model, cfg.params, cfg.u)
    sim = cfg.sim
    seed = args.seed if args.seed is not None else int(sim.get("seed", 0))
    n_paths = int(sim.get("n_paths", 10_000))
    t_sim = float(sim.get("T_sim", 35.0))
    x0 = float(cfg.bvp.get("x0", 1.0))
    res = monte_carlo(seed, n_paths, policy, cfg.model, cfg.params, cfg.u,
                      x0=x0, t_sim=t_sim, threads=args.threads)
    csv_path = out / f"{cfg.prefix}sim.csv"
    with open(csv_path, "w", newline="\n") as fh:
        fh.write(_header(cfg) + "\n")
        fh.write(SimResult.csv_header + "\n")
        fh.write(res.csv_row() + "\n")
    print(f"wrote {csv_path}")
    print(f"mean={res.mean:.12g} se={res.se:.12g} "
          f"prediction={res.value_prediction:.12g} "
          f"truncation_bound={res.truncation_bound:.12g} "
          f"baseline_mean={res.baseline_mean:.12g}")
    return 0


_COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "path": cmd_path,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="illiquid",
        description="Optimal consumption/investment with Poisson trading dates")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=".")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("ILLIQUID_THREADS", "1")))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output dir: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](cfg, out, args)
    except SolverError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return 4
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
