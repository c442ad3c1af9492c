"""Time-consistent problems: finite horizon, horizon-truncated infinite horizon,
the discounted tail problem, and pre-committed solves with a fixed anchor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, UnsupportedProblemError
from .model import DiscountSpec, ProblemSpec, discount_eval, hamiltonian, tail_bound
from .pde import Grid1D, StrategyTable, ValueField, cfl_steps, hjb_step, upwind_gradient, central_hessian


def _terminal_values(terminal, grid):
    if terminal is None:
        return np.zeros(grid.n_x)
    if callable(terminal):
        return np.asarray(terminal(grid.x), dtype=float) * np.ones(grid.n_x)
    values = np.asarray(terminal, dtype=float)
    if values.shape != (grid.n_x,):
        raise DomainError("terminal values do not match the spatial grid")
    if not np.all(np.isfinite(values)):
        raise DomainError("terminal values must be finite")
    return values


def unit_weight(t, x):
    return 1.0


def solve_finite_horizon(p: ProblemSpec, grid: Grid1D, weight_fn=unit_weight, terminal=None,
                         substeps=None):
    """Backward HJB sweep over ``grid``'s time window.

    Returns the value field on all ``n_t + 1`` time nodes and the strategy
    table with one row per step (row ``k`` governs ``[t_k, t_{k+1})``).
    ``substeps`` overrides the CFL substep count (it may only be raised).
    """
    m = cfl_steps(p, grid)
    if substeps is not None:
        if substeps < m:
            raise DomainError(f"{substeps} substeps violate the CFL limit (need {m})")
        m = int(substeps)
    times = grid.t
    values = np.empty((grid.n_t + 1, grid.n_x))
    controls = np.empty((grid.n_t, grid.n_x))
    values[-1] = _terminal_values(terminal, grid)
    for k in range(grid.n_t - 1, -1, -1):
        values[k], controls[k] = hjb_step(p, grid, values[k + 1], times[k], weight_fn, substeps=m)
    return ValueField(grid, times, values), StrategyTable(grid, times[:-1], controls)


def _horizon_for(tail_fn, tol):
    """Smallest T >= 0 with tail_fn(T) <= tol (tail_fn nonincreasing)."""
    if tail_fn(0.0) <= tol:
        return 0.0
    hi = 1.0
    while tail_fn(hi) > tol:
        hi *= 2.0
        if hi > 1e6:
            raise UnsupportedProblemError("tail map does not reach the requested tolerance")
    return brentq(lambda T: tail_fn(T) - tol, 0.0, hi, xtol=1e-12)


@dataclass(frozen=True)
class InfiniteHorizonSolution:
    value: ValueField          # V^T restricted to the report window
    strategy: StrategyTable
    horizon: float             # T, chosen so tail_bound(T) <= tol
    v_T: ValueField            # V^T on [t_start, T]
    v_2T: ValueField           # V^{2T} on [t_start, T]
    tail: float                # tail_bound(T)


def solve_infinite_horizon(p: ProblemSpec, grid: Grid1D, t_window, tol_tail):
    """Approximate the infinite-horizon value on ``[grid.t_start, t_window]``.

    The horizon T is the first multiple of ``grid.dt`` past the point where
    the envelope tail drops below ``tol_tail``; the truncated value is then
    within ``tol_tail`` of the limit (plus discretization error). A second
    solve on ``[t_start, 2T]`` is kept for the monotonicity and bound checks.
    """
    if tol_tail <= 0:
        raise DomainError("tol_tail must be positive")
    if p.cost_tail is None:
        raise UnsupportedProblemError(f"problem {p.name!r} has no closed-form tail map")
    dt, t0 = grid.dt, grid.t_start
    T_min = _horizon_for(lambda T: tail_bound(p, T), tol_tail)
    n_T = max(int(np.ceil((max(T_min, t_window) - t0) / dt - 1e-9)), 1)
    T = t0 + n_T * dt
    g_T = Grid1D(grid.x_min, grid.x_max, grid.n_x, t0, T, n_T)
    g_2T = Grid1D(grid.x_min, grid.x_max, grid.n_x, t0, t0 + 2 * n_T * dt, 2 * n_T)
    v_T, s_T = solve_finite_horizon(p, g_T)
    v_2T, _ = solve_finite_horizon(p, g_2T)
    v_2T = ValueField(g_T, v_T.times, v_2T.values[: n_T + 1])
    return InfiniteHorizonSolution(
        value=v_T.restrict(t0, v_T.times[v_T.index(_snap(v_T.times, t_window))]),
        strategy=s_T,
        horizon=T,
        v_T=v_T,
        v_2T=v_2T,
        tail=float(tail_bound(p, T)),
    )


def _snap(times, t):
    return times[int(np.argmin(np.abs(times - t)))]


def discounted_horizon(p: ProblemSpec, delta, t_anchor, tol_tail):
    """T* with sup(g0 on [t_anchor, inf)) * exp(-delta T*) / delta <= tol_tail."""
    sup = p.cost_sup(t_anchor)
    if sup <= 0:
        return t_anchor
    return max(t_anchor, np.log(sup / (delta * tol_tail)) / delta)


def solve_discounted_tail(p: ProblemSpec, delta, t_anchor, grid: Grid1D, tol_tail):
    """Classical problem with running cost exp(-delta t) g0 on ``[t_anchor, T*]``.

    ``grid`` supplies the spatial grid and the target step. Returns the value
    field (in undiscounted-at-anchor units, i.e. inf E int exp(-delta s) g0 ds)
    and its feedback table.
    """
    if delta <= 0:
        raise DomainError("delta must be positive")
    if tol_tail <= 0:
        raise DomainError("tol_tail must be positive")
    T_star = discounted_horizon(p, delta, t_anchor, tol_tail)
    n = max(int(np.ceil((T_star - t_anchor) / grid.dt - 1e-9)), 1)
    g = Grid1D(grid.x_min, grid.x_max, grid.n_x, t_anchor, t_anchor + n * grid.dt, n)
    return solve_finite_horizon(p, g, lambda t, x: np.exp(-delta * t))


def precommit_value(p: ProblemSpec, d: DiscountSpec, t0, t1, grid: Grid1D, terminal=None):
    """Pre-committed value for the self anchored at ``t0`` on ``[t0, t1]``.

    Running cost is ``lambda(t - t0) g0``; ``terminal`` is the value at ``t1``
    (e.g. ``exp(delta t0) V_delta(t1, .)`` for the head of the decomposition).
    """
    if not t1 > t0:
        raise DomainError("need t0 < t1")
    n = max(int(round((t1 - t0) / grid.dt)), 1)
    g = Grid1D(grid.x_min, grid.x_max, grid.n_x, t0, t1, n)
    return solve_finite_horizon(p, g, lambda t, x: discount_eval(d, max(t - t0, 0.0)), terminal)


def shift_equivalence_check(p: ProblemSpec, d: DiscountSpec, t_shift, grid: Grid1D, window=None):
    """Sup-norm gap between the solve anchored at ``t_shift`` and the solve of
    the time-shifted problem anchored at 0, on matching nodes."""
    window = d.T0 if window is None and d.T0 > 0 else (window or 1.0)
    n = max(int(round(window / grid.dt)), 1)
    dt = window / n
    g_shift = Grid1D(grid.x_min, grid.x_max, grid.n_x, 0.0, n * dt, n)
    g_anchor = Grid1D(grid.x_min, grid.x_max, grid.n_x, t_shift, t_shift + n * dt, n)
    anchored, _ = solve_finite_horizon(
        p, g_anchor, lambda t, x: discount_eval(d, max(t - t_shift, 0.0)))
    shifted, _ = solve_finite_horizon(
        p.shifted(t_shift), g_shift, lambda t, x: discount_eval(d, t))
    return float(np.max(np.abs(anchored.values - shifted.values)))


def bound_report(sol: InfiniteHorizonSolution, p: ProblemSpec, mask=None):
    """Discrete checks of horizon monotonicity and the truncation bound."""
    mask = sol.v_T.grid.interior_mask() if mask is None else mask
    diff = (sol.v_2T.values - sol.v_T.values)[:, mask]
    upper = tail_bound(p, 0.0)
    return {
        "horizon": sol.horizon,
        "tail_bound": sol.tail,
        "min_gap": float(diff.min()),
        "max_gap": float(diff.max()),
        "monotone": bool(np.all(diff >= 0)),
        "min_value": float(min(sol.v_T.values[:, mask].min(), sol.v_2T.values[:, mask].min())),
        "max_value": float(max(sol.v_T.values[:, mask].max(), sol.v_2T.values[:, mask].max())),
        "uniform_bound": float(upper),
    }


def strategy_mismatches(p: ProblemSpec, field: ValueField, table: StrategyTable, weight_fn=unit_weight):
    """Re-select controls from the stored slices via the scalar Hamiltonian.

    Valid for sweeps without CFL substeps (the stored control then comes from
    the derivatives of the next stored slice). Returns the number of interior
    cells where the recomputed argmin differs from the table.
    """
    x = field.x
    misses = 0
    for k, t in enumerate(table.times):
        nxt = field.values[k + 1]
        hess = central_hessian(nxt, field.grid.dx)
        for i in range(1, field.grid.n_x - 1):
            best, best_val = None, None
            for u in p.control_grid:
                grad = upwind_gradient(nxt, field.grid.dx, p.drift(t, x, u))[i]
                val = hamiltonian(p, t, x[i], u, grad, hess[i], weight_fn(t, x[i]))
                if best_val is None or val < best_val:
                    best, best_val = u, val
            misses += int(best != table.controls[k, i])
    return misses
