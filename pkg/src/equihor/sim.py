"""Euler-Maruyama paths under tabulated feedback, Monte Carlo costs, the naive
(re-optimizing) agent, and spike perturbations of the equilibrium strategy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .classical import precommit_value, solve_discounted_tail
from .equilibrium import evaluate_strategy_value
from .errors import DomainError, SimulationError
from .model import DiscountSpec, ProblemSpec, discount_eval
from .pde import TIME_TOL, Grid1D, StrategyTable

GUARD_MARGIN = 2.0
MAX_FLAG_FRACTION = 0.01


def standard_normals(seed, step_index, n_paths):
    """Normals for one time step; path ``i`` always gets the same draw.

    Philox keyed by (seed, step) is the counter-based stream; path ``i`` reads
    raw words 2i and 2i+1 and maps them to one normal by Box-Muller.
    """
    bits = np.random.Philox(key=np.array([seed, step_index], dtype=np.uint64))
    raw = bits.random_raw(2 * n_paths).reshape(n_paths, 2)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return np.sqrt(-2.0 * np.log(u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])


@dataclass(frozen=True)
class PathBatch:
    seed: int
    step: float
    times: np.ndarray      # (n_steps + 1,)
    states: np.ndarray     # (n_paths, n_steps + 1)
    controls: np.ndarray   # (n_paths, n_steps), applied on [t_k, t_{k+1})
    flagged: np.ndarray    # (n_paths,) left the guard box at some point

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def n_flagged(self):
        return int(self.flagged.sum())


def simulate_feedback(p: ProblemSpec, strategy: StrategyTable, t0, x0, step, horizon, n_paths,
                      seed, guard=None):
    """Simulate dX = b dt + sigma dW with u = strategy(t, X) from (t0, x0) to ``horizon``.

    Paths leaving the guard box are frozen and flagged; a flagged fraction of
    1% or more raises SimulationError.
    """
    if step <= 0:
        raise DomainError("step must be positive")
    n_steps = int(round((horizon - t0) / step))
    if n_steps < 1 or abs(t0 + n_steps * step - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise DomainError("horizon - t0 must be a positive multiple of the step")
    g = strategy.grid
    lo, hi = guard if guard is not None else (g.x_min - GUARD_MARGIN, g.x_max + GUARD_MARGIN)
    times = t0 + step * np.arange(n_steps + 1)
    states = np.empty((n_paths, n_steps + 1))
    controls = np.empty((n_paths, n_steps))
    flagged = np.zeros(n_paths, dtype=bool)
    x = np.full(n_paths, float(x0))
    states[:, 0] = x
    root = np.sqrt(step)
    for k in range(n_steps):
        t = times[k]
        u = strategy.lookup(t, x)
        xi = standard_normals(seed, k, n_paths)
        x_new = x + p.drift(t, x, u) * step + p.diffusion(t, x, u) * root * xi
        out = ~np.isfinite(x_new) | (x_new < lo) | (x_new > hi)
        flagged |= out
        x = np.where(flagged, x, x_new)
        controls[:, k] = u
        states[:, k + 1] = x
    if flagged.mean() >= MAX_FLAG_FRACTION:
        raise SimulationError(f"{flagged.sum()} of {n_paths} paths left the guard box [{lo}, {hi}]")
    return PathBatch(seed=seed, step=step, times=times, states=states, controls=controls,
                     flagged=flagged)


def mc_cost(batch: PathBatch, d: DiscountSpec, anchor, g0, terminal=None, terminal_weight=1.0):
    """Mean and standard error of int_anchor^H lambda(s - anchor) g0 ds + terminal.

    Trapezoid rule per path on the batch grid; the control at the last node
    is the one applied on the last step. ``terminal`` maps X(H) to a value and
    is multiplied by ``terminal_weight``. Flagged paths are excluded.
    """
    times = batch.times
    j = int(np.argmin(np.abs(times - anchor)))
    if abs(times[j] - anchor) > TIME_TOL * max(1.0, abs(anchor)) or j == len(times) - 1:
        raise DomainError(f"anchor {anchor} is not a node inside the batch window")
    keep = ~batch.flagged
    s = times[j:]
    x = batch.states[keep, j:]
    u = np.concatenate([batch.controls[keep, j:], batch.controls[keep, -1:]], axis=1)
    weight = np.asarray(discount_eval(d, np.maximum(s - anchor, 0.0)))
    running = weight * np.asarray(g0(s, x, u)) * np.ones_like(x)
    per_path = trapezoid(running, s, axis=1)
    if terminal is not None:
        per_path = per_path + terminal_weight * np.asarray(terminal(x[:, -1]), dtype=float)
    n = per_path.size
    if n == 0:
        raise SimulationError("no unflagged paths")
    if n == 1:
        return float(per_path[0]), 0.0
    return float(per_path.mean()), float(per_path.std(ddof=1) / np.sqrt(n))


@dataclass
class RevisionReport:
    revision_times: list
    deviations: list                     # one per revision after the first
    plans: list = field(repr=False)      # per revision: (precommit table or None)
    strategy: StrategyTable = field(repr=False, default=None)
    cost: float = np.nan
    cost_se: float = np.nan

    @property
    def n_plans(self):
        return len(self.revision_times)

    @property
    def n_nonzero(self):
        return int(sum(dev > 0 for dev in self.deviations))


def _plan_row(t, t_i, T0, plan, tail_strategy):
    if plan is not None and t < t_i + T0 - TIME_TOL:
        return plan.row(t)
    return tail_strategy.row(t)


def naive_agent(p: ProblemSpec, d: DiscountSpec, t0, x0, revision_interval, step, n_paths, seed,
                grid: Grid1D, horizon, tol_tail=1e-4):
    """Replay the naive agent who re-plans every ``revision_interval`` on [t0, t0 + horizon).

    At each revision t_i the plan is the pre-committed solve anchored at t_i
    on [t_i, t_i + T0] with terminal exp(delta t_i) V_delta(t_i + T0), followed
    by the tail feedback. Deviation i is the sup over the x-grid of the gap
    between plan i-1 and plan i at t_i. All revisions share one tail solve,
    so plans differ only through the anchor. The realized cost is the
    t0-anchored functional under the spliced controls.
    """
    dt = grid.dt
    n_rev = int(round(revision_interval / dt))
    if n_rev < 1 or abs(n_rev * dt - revision_interval) > 1e-9 * max(1.0, revision_interval):
        raise DomainError("revision interval must be a positive multiple of the grid step")
    if abs(step - dt) > 1e-12 * dt:
        raise DomainError("simulation step must equal the grid step")
    revisions = [t0 + i * revision_interval
                 for i in range(int(np.ceil(horizon / revision_interval - 1e-9)))]
    T0, delta = d.T0, d.delta
    tail_value, tail_strategy = solve_discounted_tail(p, delta, t0 + T0, grid, tol_tail)
    if revisions[-1] + T0 > tail_value.times[-1] + TIME_TOL:
        raise DomainError("revision horizon runs past the truncated tail")
    plans = []
    for t_i in revisions:
        if T0 > 0:
            terminal = np.exp(delta * t_i) * tail_value.at(t_i + T0)
            _, table = precommit_value(p, d, t_i, t_i + T0, grid, terminal)
            plans.append(table)
        else:
            plans.append(None)
    deviations = []
    for i in range(1, len(revisions)):
        t_i = revisions[i]
        old = _plan_row(t_i, revisions[i - 1], T0, plans[i - 1], tail_strategy)
        new = _plan_row(t_i, t_i, T0, plans[i], tail_strategy)
        deviations.append(float(np.max(np.abs(old - new))))

    # spliced feedback on the common grid from t0 to the end of the tail
    times = tail_value.times
    n_lead = int(round(T0 / dt))
    all_times = np.concatenate([t0 + dt * np.arange(n_lead), times[:-1]])
    rows = np.empty((all_times.size, grid.n_x))
    for k, t in enumerate(all_times):
        i = max(int(np.searchsorted(revisions, t + TIME_TOL, side="right")) - 1, 0)
        rows[k] = _plan_row(t, revisions[i], T0, plans[i], tail_strategy)
    spliced = StrategyTable(tail_strategy.grid, all_times, rows)
    batch = simulate_feedback(p, spliced, t0, x0, step, times[-1], n_paths, seed)
    cost, se = mc_cost(batch, d, t0, p.base_cost)
    return RevisionReport(revision_times=revisions, deviations=deviations, plans=plans,
                          strategy=spliced, cost=cost, cost_se=se)


def spike_cost(p: ProblemSpec, d: DiscountSpec, tau, strategy: StrategyTable, t_spike, u_alt,
               eps, grid: Grid1D, terminal):
    """Cost change of the ``t_spike``-self when ``u_alt`` replaces the strategy on
    [t_spike, t_spike + eps).

    ``strategy`` is the equilibrium table on [tau, tau + T0]; ``terminal`` the
    values at tau + T0. Both costs come from ``evaluate_strategy_value``.
    Returns the difference (perturbed minus base) at t_spike on the x-grid.
    """
    g = Grid1D(grid.x_min, grid.x_max, grid.n_x, tau, tau + d.T0, grid.n_t)
    if eps < 0:
        raise DomainError("eps must be nonnegative")
    if t_spike < tau - TIME_TOL or t_spike + eps > g.t_end + TIME_TOL * max(1.0, g.t_end):
        raise DomainError("spike window must lie inside [tau, tau + T0]")
    u_alt = np.asarray(u_alt, dtype=float)
    if not np.all(np.isin(u_alt, p.control_grid)):
        raise DomainError("u_alt must lie on the control grid")
    n_eps = int(round(eps / g.dt))
    if abs(n_eps * g.dt - eps) > 1e-9 * max(1.0, eps):
        raise DomainError("eps must be a multiple of the grid step")
    if n_eps == 0:
        return np.zeros(g.n_x)
    start = int(strategy.row_index(t_spike))
    perturbed = strategy.with_rows(slice(start, start + n_eps), u_alt)
    base = evaluate_strategy_value(p, d, tau, strategy, t_spike, g, terminal)
    bumped = evaluate_strategy_value(p, d, tau, perturbed, t_spike, g, terminal)
    return bumped.values[0] - base.values[0]
