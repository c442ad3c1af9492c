"""Command line entry point: ``equihor <command> --config run.toml``.

Exit codes: 0 all checks pass, 1 a check failed, 2 bad arguments or config
syntax/keys, 3 invalid values, 4 numerical instability.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classical import (bound_report, precommit_value, solve_discounted_tail,
                        solve_finite_horizon, solve_infinite_horizon)
from .equilibrium import glue, solve_equilibrium_system
from .errors import DomainError, StabilityError, UnsupportedProblemError
from .model import (DiscountSpec, catalog_problem, exponential_cost_problem,
                    validate_problem, zero_cost_problem)
from .pde import Grid1D, cfl_steps
from .recursive import (RecursiveCostSpec, catalog_recursive_spec, decomposition_check,
                        recursive_cost_field, tail_reduction_check)
from .refine import run_study
from .sim import mc_cost, naive_agent, simulate_feedback

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

COMMANDS = ("solve-classical", "solve-equilibrium", "simulate", "naive-compare",
            "recursive-check", "convergence-study")

PROBLEM_PARAMS = {
    "catalog": {"beta0", "beta1", "beta2", "sigma0", "sigma1", "a", "c", "rho", "x_star",
                "u_max", "n_controls", "epsilon"},
    "zero": {"sigma0", "n_controls", "epsilon"},
    "exp-cost": {"rate", "scale", "sigma0", "n_controls", "epsilon"},
}

DEFAULTS = {
    "out": "equihor_out",
    "problem": {"name": "catalog"},
    "discount": {"kind": "hyperbolic", "delta": 0.5, "T0": 2.0},
    "grid": {"x_min": -4.0, "x_max": 4.0, "n_x": 101, "n_t": 40, "t_window": 2.0},
    "anchor": {"tau": 0.0, "t0": 0.0, "x0": 0.0},
    "sim": {"n_paths": 20000, "seed": 0, "rev_interval": 1.0, "horizon": 4.0},
    "tol": {"tail": 1e-4, "mc_sigma": 3.0, "grid": 1e-3, "closed_form": 1e-8},
}
OPTIONAL = {"discount": {"k"}, "sim": {"step"}}
EXIT_ASSERT, EXIT_PARSE, EXIT_VALIDATION, EXIT_STABILITY = 1, 2, 3, 4


class ConfigError(Exception):
    def __init__(self, message, key=None, code=EXIT_PARSE):
        super().__init__(message)
        self.key = key
        self.code = code


@dataclass
class RunConfig:
    raw: dict

    def __getitem__(self, section):
        return self.raw[section]

    @property
    def out(self):
        return self.raw["out"]

    def digest(self):
        """Hash of everything that affects results (the output path does not)."""
        body = {k: v for k, v in self.raw.items() if k != "out"}
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _merge(user):
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in user.items():
        if key == "out":
            cfg["out"] = value
            continue
        if key not in DEFAULTS or not isinstance(value, dict):
            raise ConfigError(f"unknown config key {key!r}", key)
        section = cfg[key]
        for sub, v in value.items():
            name = f"{key}.{sub}"
            allowed = set(DEFAULTS[key]) | OPTIONAL.get(key, set())
            if key == "problem" and sub != "name":
                problem = value.get("name", cfg["problem"]["name"])
                allowed = PROBLEM_PARAMS.get(problem, set())
            if sub not in allowed:
                raise ConfigError(f"unknown config key {name!r}", name)
            section[sub] = v
    return cfg


def _number(cfg, section, key, kind=float, low=None, high=None, strict_low=False):
    value = cfg[section][key]
    name = f"{section}.{key}"
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number", name, EXIT_VALIDATION)
    if kind is int and int(value) != value:
        raise ConfigError(f"{name} must be an integer", name, EXIT_VALIDATION)
    value = kind(value)
    if low is not None and (value <= low if strict_low else value < low):
        raise ConfigError(f"{name}={value} is out of range", name, EXIT_VALIDATION)
    if high is not None and value > high:
        raise ConfigError(f"{name}={value} is out of range", name, EXIT_VALIDATION)
    cfg[section][key] = value
    return value


def validate_config(cfg):
    if cfg["problem"]["name"] not in PROBLEM_PARAMS:
        raise ConfigError(f"unknown problem {cfg['problem']['name']!r}", "problem.name",
                          EXIT_VALIDATION)
    if cfg["discount"]["kind"] not in ("hyperbolic", "exponential"):
        raise ConfigError("discount.kind must be 'hyperbolic' or 'exponential'",
                          "discount.kind", EXIT_VALIDATION)
    for key in cfg["problem"]:
        if key != "name":
            _number(cfg, "problem", key, int if key == "n_controls" else float)
    _number(cfg, "discount", "delta", low=0, strict_low=True)
    _number(cfg, "discount", "T0", low=0)
    if "k" in cfg["discount"]:
        _number(cfg, "discount", "k", low=0)
    _number(cfg, "grid", "x_min")
    _number(cfg, "grid", "x_max")
    _number(cfg, "grid", "n_x", int, low=3)
    _number(cfg, "grid", "n_t", int, low=1)
    _number(cfg, "grid", "t_window", low=0, strict_low=True)
    for key in ("tau", "t0", "x0"):
        _number(cfg, "anchor", key)
    _number(cfg, "sim", "n_paths", int, low=2)
    _number(cfg, "sim", "seed", int, low=0, high=2 ** 64 - 1)
    _number(cfg, "sim", "rev_interval", low=0, strict_low=True)
    _number(cfg, "sim", "horizon", low=0, strict_low=True)
    if "step" in cfg["sim"]:
        _number(cfg, "sim", "step", low=0, strict_low=True)
    for key in DEFAULTS["tol"]:
        _number(cfg, "tol", key, low=0, strict_low=True)
    if not isinstance(cfg["out"], str):
        raise ConfigError("out must be a path string", "out", EXIT_VALIDATION)
    return cfg


def load_config(path):
    try:
        with open(path, "rb") as fh:
            user = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    return user


def build_config(user=None, seed=None, out=None):
    cfg = _merge(user or {})
    if seed is not None:
        cfg["sim"]["seed"] = seed
    env_out = os.environ.get("EQUIHOR_OUT")
    if out is not None:
        cfg["out"] = out
    elif env_out:
        cfg["out"] = env_out
    return RunConfig(validate_config(cfg))


# ---------------------------------------------------------------- artifacts

def write_csv(path, header, columns):
    data = np.column_stack([np.asarray(c, dtype=float).ravel() for c in columns])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(header), comments="")


def read_csv(path):
    """Header names and the data matrix of an emitted CSV."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def write_field(path, field):
    tt, xx = np.meshgrid(field.times, field.x, indexing="ij")
    write_csv(path, ("t", "x", "value"), (tt, xx, field.values))


def write_strategy(path, table):
    tt, xx = np.meshgrid(table.times, table.grid.x, indexing="ij")
    write_csv(path, ("t", "x", "u"), (tt, xx, table.controls))


def write_bitime(path, theta):
    t = theta.times
    rows = []
    for j in range(len(t)):
        for k in range(j, len(t)):
            rows.append(np.column_stack([np.full(theta.grid.n_x, t[j]), np.full(theta.grid.n_x, t[k]),
                                         theta.grid.x, theta.values[j, k]]))
    data = np.vstack(rows)
    write_csv(path, ("rho", "t", "x", "value"), data.T)


# ---------------------------------------------------------------- setup

def make_problem(cfg):
    spec = dict(cfg["problem"])
    name = spec.pop("name")
    maker = {"catalog": catalog_problem, "zero": zero_cost_problem,
             "exp-cost": exponential_cost_problem}[name]
    return maker(**spec)


def make_discount(cfg):
    dc = cfg["discount"]
    if dc["kind"] == "exponential":
        d = DiscountSpec.exponential(dc["delta"], dc["T0"])
    else:
        d = DiscountSpec.matched_hyperbolic(dc["delta"], dc["T0"])
        if "k" in dc and abs(dc["k"] - d.hyperbolic_rate) > 1e-9 * max(1.0, d.hyperbolic_rate):
            raise DomainError(f"discount.k={dc['k']} does not match the matched rate "
                              f"{d.hyperbolic_rate:.12g}")
    return d


def base_grid(cfg, d):
    gc = cfg["grid"]
    span = d.T0 if d.T0 > 0 else gc["t_window"]
    tau = cfg["anchor"]["tau"]
    return Grid1D(gc["x_min"], gc["x_max"], gc["n_x"], tau, tau + span, gc["n_t"])


def _equilibrium(cfg, p, d, grid):
    if d.T0 <= 0:
        raise DomainError("the equilibrium commands need discount.T0 > 0")
    tau = cfg["anchor"]["tau"]
    tail_value, tail_strategy = solve_discounted_tail(p, d.delta, tau + d.T0, grid,
                                                      cfg["tol"]["tail"])
    theta, _ = solve_equilibrium_system(p, d, tau, grid, tail_value)
    glued = glue(theta, tail_value, tail_strategy, tau, d.delta)
    return tail_value, tail_strategy, theta, glued


# ---------------------------------------------------------------- commands

def cmd_solve_classical(cfg, p, d, grid, out):
    tol = cfg["tol"]
    tau = cfg["anchor"]["tau"]
    step = Grid1D(grid.x_min, grid.x_max, grid.n_x, tau, tau + grid.dt, 1)
    sol = solve_infinite_horizon(p, step, tau + cfg["grid"]["t_window"], tol["tail"])
    tail_value, tail_strategy = solve_discounted_tail(p, d.delta, tau + d.T0, step, tol["tail"])
    report = bound_report(sol, p)
    write_field(out / "value_T.csv", sol.v_T)
    write_field(out / "value_inf.csv", sol.value)
    write_field(out / "value_delta.csv", tail_value)
    write_strategy(out / "strategy_delta.csv", tail_strategy)
    checks = {
        "monotone_in_horizon": report["min_gap"] >= 0.0,
        "truncation_bound": report["max_gap"] <= report["tail_bound"] + tol["grid"],
        "nonnegative": report["min_value"] >= 0.0,
        "uniform_bound": report["max_value"] <= report["uniform_bound"] + tol["grid"],
    }
    return report, checks


def cmd_solve_equilibrium(cfg, p, d, grid, out):
    tol = cfg["tol"]
    tail_value, _, theta, glued = _equilibrium(cfg, p, d, grid)
    g = theta.grid
    diag = theta.diagonal()
    slack = []
    for j, t in enumerate(g.t[:-1]):
        pre, _ = precommit_value(p, d, t, g.t_end, g, theta.terminal()[j])
        slack.append(float(np.min(diag[j] - pre.values[0])))
    write_bitime(out / "theta.csv", theta)
    write_field(out / "diagonal.csv", theta.diagonal_field())
    write_field(out / "glued_value.csv", glued.value)
    write_strategy(out / "glued_strategy.csv", glued.strategy)
    seam_gap = float(np.max(np.abs(glued.seam_left - glued.seam_right)))
    report = {"seam": glued.seam, "seam_gap": seam_gap, "sandwich_min_slack": min(slack),
              "value_at_tau_x0": float(np.interp(cfg["anchor"]["x0"], g.x, diag[0]))}
    checks = {"seam_continuity": seam_gap == 0.0,
              "sandwich": min(slack) >= -tol["grid"]}
    return report, checks


def _sim_step(cfg, grid):
    return cfg["sim"].get("step", grid.dt)


def cmd_simulate(cfg, p, d, grid, out):
    tol, sc, anchor = cfg["tol"], cfg["sim"], cfg["anchor"]
    tail_value, _, theta, glued = _equilibrium(cfg, p, d, grid)
    batch = simulate_feedback(p, glued.strategy, anchor["tau"], anchor["x0"], _sim_step(cfg, grid),
                              tail_value.times[-1], sc["n_paths"], sc["seed"])
    est, se = mc_cost(batch, d, anchor["tau"], p.base_cost)
    pde = float(np.interp(anchor["x0"], theta.grid.x, theta.diagonal()[0]))
    keep = batch.states[~batch.flagged]
    q = np.quantile(keep, [0.05, 0.5, 0.95], axis=0)
    write_csv(out / "paths_summary.csv", ("t", "mean", "std", "q05", "q50", "q95"),
              (batch.times, keep.mean(axis=0), keep.std(axis=0), q[0], q[1], q[2]))
    report = {"mc_estimate": est, "mc_stderr": se, "pde_value": pde, "gap": abs(est - pde),
              "n_flagged": batch.n_flagged, "n_paths": batch.n_paths}
    checks = {"mc_vs_pde": abs(est - pde) <= tol["mc_sigma"] * se + tol["grid"]}
    return report, checks


def cmd_naive_compare(cfg, p, d, grid, out):
    sc, anchor = cfg["sim"], cfg["anchor"]
    step = _sim_step(cfg, grid)
    rep = naive_agent(p, d, anchor["tau"], anchor["x0"], sc["rev_interval"], step,
                      sc["n_paths"], sc["seed"], grid, sc["horizon"], cfg["tol"]["tail"])
    report = {"n_plans": rep.n_plans, "n_nonzero_deviations": rep.n_nonzero,
              "naive_cost": rep.cost, "naive_stderr": rep.cost_se}
    if d.T0 > 0:
        tail_value, _, theta, glued = _equilibrium(cfg, p, d, grid)
        batch = simulate_feedback(p, glued.strategy, anchor["tau"], anchor["x0"], step,
                                  tail_value.times[-1], sc["n_paths"], sc["seed"])
        report["equilibrium_cost"], report["equilibrium_stderr"] = mc_cost(
            batch, d, anchor["tau"], p.base_cost)
    write_csv(out / "revisions.csv", ("revision", "t", "deviation"),
              (np.arange(1, rep.n_plans), rep.revision_times[1:], rep.deviations))
    checks = {}
    if d.kind == "exponential":
        checks["no_plan_deviation"] = rep.n_nonzero == 0
    return report, checks


def _closed_form_residuals(delta, T0, step, horizon=10.0):
    times = np.arange(0.0, horizon + step / 2, step)
    flat = np.zeros_like(times)
    specs = {
        "constant": RecursiveCostSpec(lambda r, s, x, u, y: -delta * y + 1.0,
                                      lambda s, x, u: np.ones_like(np.asarray(s, dtype=float)),
                                      delta, T0, lambda s: np.ones_like(np.asarray(s, dtype=float))),
        "exp_decay": RecursiveCostSpec(lambda r, s, x, u, y: -delta * y + np.exp(-s),
                                       lambda s, x, u: np.exp(-np.asarray(s, dtype=float)),
                                       delta, T0, lambda s: np.exp(-np.asarray(s, dtype=float))),
    }
    return {name: tail_reduction_check(r, times, flat, flat, 0.0) for name, r in specs.items()}


def cmd_recursive_check(cfg, p, d, grid, out):
    tol = cfg["tol"]
    if d.T0 <= 0:
        raise DomainError("recursive-check needs discount.T0 > 0")
    _, _, _, glued = _equilibrium(cfg, p, d, grid)
    t0 = cfg["anchor"]["tau"]
    r = catalog_recursive_spec(p, d.delta, d.T0)
    coarse = _closed_form_residuals(d.delta, d.T0, 1e-3)
    fine = _closed_form_residuals(d.delta, d.T0, 5e-4)
    m = cfl_steps(p, grid)
    res_h = decomposition_check(p, r, glued.strategy, t0, grid, tol["tail"], substeps=m)
    res_h2 = decomposition_check(p, r, glued.strategy, t0, grid, tol["tail"], substeps=2 * m)
    y_h = recursive_cost_field(p, r, glued.strategy, t0, grid, tol["tail"], substeps=m)
    y_h2 = recursive_cost_field(p, r, glued.strategy, t0, grid, tol["tail"], substeps=2 * m)
    step_err = 2.0 * float(np.max(np.abs(y_h.values[0] - y_h2.values[0])))
    write_field(out / "recursive_value.csv", y_h)
    report = {"tail_reduction": coarse, "tail_reduction_half_step": fine,
              "decomposition": res_h, "decomposition_half_step": res_h2, "step_err": step_err}
    checks = {f"tail_reduction_{k}": v <= tol["closed_form"] for k, v in coarse.items()}
    checks["decomposition"] = res_h <= 2.0 * step_err
    return report, checks


def cmd_convergence_study(cfg, p, d, grid, out):
    tau = cfg["anchor"]["tau"]
    g = Grid1D(grid.x_min, grid.x_max, grid.n_x, tau, tau + cfg["grid"]["t_window"],
               max(1, int(round(cfg["grid"]["t_window"] / grid.dt))))
    exact = None
    if p.name == "exp-cost":
        rate, scale = p.params.get("rate", 1.0), p.params.get("scale", 1.0)
        exact = scale * (np.exp(-rate * tau) - np.exp(-rate * g.t_end)) / rate
    study = run_study(lambda gg: solve_finite_horizon(p, gg)[0].values[0], g, 3, exact=exact)
    rows = study.table()
    write_csv(out / "refinement.csv", ("level", "n_x", "n_t", "dx", "dt", "error"),
              [[row[k] for row in rows] for k in ("level", "n_x", "n_t", "dx", "dt", "error")])
    order = float(study.orders[-1]) if len(study.orders) else float("nan")
    report = {"errors": [float(e) for e in study.errors], "orders": study.orders.tolist(),
              "fitted_order": order, "grid_err": study.grid_err,
              "error_kind": "exact" if exact is not None else "successive"}
    checks = {}
    if exact is not None:
        # the CFL substep shrinks like dx^2, so a time-only cost can show order 2
        checks["at_least_first_order"] = order >= 0.7
    return report, checks


HANDLERS = {
    "solve-classical": cmd_solve_classical,
    "solve-equilibrium": cmd_solve_equilibrium,
    "simulate": cmd_simulate,
    "naive-compare": cmd_naive_compare,
    "recursive-check": cmd_recursive_check,
    "convergence-study": cmd_convergence_study,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _emit(out, record, quiet):
    text = json.dumps(_jsonable(record), indent=2, sort_keys=True)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(text + "\n")
    if not quiet:
        print(text)


def _fail(kind, message, code, key=None, out=None, quiet=False, cfg=None):
    record = {"status": "error", "kind": kind, "message": message, "exit_code": code}
    if key is not None:
        record["key"] = key
    if cfg is not None:
        record["config_hash"] = cfg.digest()
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out is not None:
        _emit(out, record, quiet=True)
    return code


def run_command(name, cfg: RunConfig, check=True, quiet=False):
    """Run one pipeline, write its artifacts and summary; returns the exit status."""
    out = Path(cfg.out)
    try:
        p = make_problem(cfg)
        d = make_discount(cfg)
        violations = validate_problem(p, d)
        if violations:
            v = violations[0]
            return _fail("validation", f"{v.check}: {v.message}", EXIT_VALIDATION, out=out,
                         quiet=quiet, cfg=cfg)
        grid = base_grid(cfg, d)
        out.mkdir(parents=True, exist_ok=True)
        report, checks = HANDLERS[name](cfg, p, d, grid, out)
    except StabilityError as exc:
        return _fail("stability", str(exc), EXIT_STABILITY, out=out, quiet=quiet, cfg=cfg)
    except (DomainError, UnsupportedProblemError, TypeError) as exc:
        return _fail("validation", str(exc), EXIT_VALIDATION, out=out, quiet=quiet, cfg=cfg)
    passed = all(checks.values()) if check else True
    record = {
        "status": "ok" if passed else "assertion-failed",
        "command": name,
        "config_hash": cfg.digest(),
        "seed": cfg["sim"]["seed"],
        "tolerances": cfg["tol"],
        "checks_enabled": check,
        "checks": checks,
        "metrics": report,
        "artifacts": sorted(str(pth.name) for pth in out.glob("*.csv")),
    }
    _emit(out, record, quiet)
    return 0 if passed else EXIT_ASSERT


def build_parser():
    parser = argparse.ArgumentParser(prog="equihor",
                                     description="Time-inconsistent control solvers and checks.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="TOML run configuration")
    parser.add_argument("--out", help="output directory (overrides EQUIHOR_OUT and config)")
    parser.add_argument("--seed", type=int, help="simulation seed (overrides config)")
    parser.add_argument("--check", dest="check", action="store_true", default=True)
    parser.add_argument("--no-check", dest="check", action="store_false")
    parser.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        user = load_config(args.config) if args.config else {}
        cfg = build_config(user, seed=args.seed, out=args.out)
    except ConfigError as exc:
        kind = "parse" if exc.code == EXIT_PARSE else "validation"
        return _fail(kind, str(exc), exc.code, key=exc.key)
    return run_command(args.command, cfg, check=args.check, quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
