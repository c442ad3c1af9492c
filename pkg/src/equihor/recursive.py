"""Recursive (BSDE-type) costs under a fixed feedback strategy.

Under a Markov feedback the backward equation for Y(s; t0, x) reduces to the
semilinear PDE

    theta_t + L^psi theta + g(t0, s, x, psi(s, x), theta) = 0,

which is marched with the same explicit upwind scheme as everything else. The
Z component only enters through the martingale term and is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import simpson

from .errors import DomainError, StructuralError
from .model import ProblemSpec
from .pde import TIME_TOL, Grid1D, StrategyTable, ValueField, cfl_steps, semilinear_step

STRUCTURE_TOL = 1e-10


@dataclass(frozen=True)
class RecursiveCostSpec:
    """Generator g(rho, s, x, u, y) with a linear tail -delta y + g0 after T0."""

    generator: Callable
    tail_generator: Callable     # g0(s, x, u) >= 0
    delta: float
    T0: float
    cost_bound: Callable         # phi(s) >= |g0(s, ., .)|
    name: str = "recursive"

    def __post_init__(self):
        if self.delta <= 0:
            raise DomainError("delta must be positive")
        if self.T0 < 0:
            raise DomainError("T0 must be nonnegative")

    def tail_source(self, s, x, u, y):
        return -self.delta * y + self.tail_generator(s, x, u)


def check_structure(r: RecursiveCostSpec, control_grid, n_samples=2000, seed=0,
                    t_max=30.0, x_range=(-6.0, 6.0), y_range=(-10.0, 10.0)):
    """Sample the tail structure and the envelope; raise StructuralError on failure."""
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0.0, t_max, n_samples)
    lag = r.T0 + rng.uniform(0.0, t_max, n_samples)
    s = rho + lag
    x = rng.uniform(*x_range, n_samples)
    u = rng.choice(np.asarray(control_grid, dtype=float), n_samples)
    y = rng.uniform(*y_range, n_samples)
    gap = np.abs(r.generator(rho, s, x, u, y) - r.tail_source(s, x, u, y))
    if np.max(gap) > STRUCTURE_TOL:
        i = int(np.argmax(gap))
        raise StructuralError(
            f"generator is not -delta*y + g0 after T0 at rho={rho[i]:.4g}, s={s[i]:.4g} "
            f"(gap {gap[i]:.3g})")
    s_any = rng.uniform(0.0, t_max, n_samples)
    g0 = np.abs(r.tail_generator(s_any, x, u))
    if np.any(g0 > r.cost_bound(s_any) * (1 + 1e-12) + 1e-14):
        raise StructuralError("tail generator exceeds its envelope")


def catalog_recursive_spec(p: ProblemSpec, delta, T0, head_factor=0.5):
    """Head generator -head_factor*delta*y + g0, tail -delta*y + g0, g0 from ``p``."""

    def generator(rho, s, x, u, y):
        head = np.asarray(s - rho) < T0
        rate = np.where(head, head_factor * delta, delta)
        return -rate * y + p.base_cost(s, x, u)

    return RecursiveCostSpec(generator=generator, tail_generator=p.base_cost, delta=delta,
                             T0=T0, cost_bound=p.cost_bound, name=f"{p.name}-recursive")


def _tail_horizon(r: RecursiveCostSpec, t_from, tol_tail):
    sup = float(r.cost_bound(t_from))
    if sup <= 0:
        return t_from
    return max(t_from, np.log(sup / (r.delta * tol_tail)) / r.delta)


def _window(t0, t1, dt):
    n = int(round((t1 - t0) / dt))
    if abs(t0 + n * dt - t1) > TIME_TOL * max(1.0, abs(t1)):
        raise DomainError(f"window [{t0}, {t1}] is not a multiple of the step {dt}")
    return n


def _check_cover(strategy: StrategyTable, t0, t1):
    start = strategy.times[0]
    stop = strategy.times[-1] + strategy.grid.dt
    if t0 < start - TIME_TOL or t1 > stop + TIME_TOL * max(1.0, abs(stop)):
        raise DomainError(f"strategy covers [{start}, {stop}], need [{t0}, {t1}]")


def _march(p, grid, strategy, times, terminal, source, m):
    """Backward semilinear sweep over ``times``; returns all slices."""
    values = np.empty((len(times), grid.n_x))
    values[-1] = terminal
    for k in range(len(times) - 2, -1, -1):
        values[k] = semilinear_step(p, grid, values[k + 1], times[k], strategy.row(times[k]),
                                    source, substeps=m)
    return values


def _plan(p, r, strategy, t0, grid, tol_tail, substeps):
    dt = grid.dt
    seam = t0 + r.T0
    n_head = _window(t0, seam, dt) if r.T0 > 0 else 0
    n_tail = max(int(np.ceil((_tail_horizon(r, seam, tol_tail) - seam) / dt - 1e-9)), 1)
    t_end = seam + n_tail * dt
    g = Grid1D(grid.x_min, grid.x_max, grid.n_x, t0, t_end, n_head + n_tail)
    _check_cover(strategy, t0, t_end)
    m = cfl_steps(p, g) if substeps is None else int(substeps)
    return g, n_head, m


def recursive_cost_field(p: ProblemSpec, r: RecursiveCostSpec, strategy: StrategyTable, t0,
                         grid: Grid1D, tol_tail=1e-4, substeps=None):
    """Recursive cost of the ``t0``-self under ``strategy``, in Y units.

    The tail value V_r(s, x) = E int_s^T* exp(-delta v) g0 dv is a linear
    fixed-policy evaluation; the head is the semilinear solve on
    [t0, t0 + T0] with terminal exp(delta (t0 + T0)) V_r. Returns one field
    over [t0, T*]: the head solution followed by exp(delta s) V_r(s, .).
    ``grid`` gives the spatial grid and the step.
    """
    check_structure(r, p.control_grid)
    g, n_head, m = _plan(p, r, strategy, t0, grid, tol_tail, substeps)
    t = g.t
    delta = r.delta

    def tail_source(s, x, u, v):
        return np.exp(-delta * s) * r.tail_generator(s, x, u)

    v_r = _march(p, g, strategy, t[n_head:], np.zeros(g.n_x), tail_source, m)
    tail = np.exp(delta * t[n_head:])[:, None] * v_r
    if n_head == 0:
        return ValueField(g, t, tail)

    def head_source(s, x, u, v):
        return r.generator(t0, s, x, u, v)

    head = _march(p, g, strategy, t[: n_head + 1], tail[0], head_source, m)
    return ValueField(g, t, np.vstack([head[:-1], tail]))


def decomposition_check(p: ProblemSpec, r: RecursiveCostSpec, strategy: StrategyTable, t0,
                        grid: Grid1D, tol_tail=1e-4, substeps=None, mask=None):
    """Sup gap at ``t0`` between the one-window and the decomposed recursive cost.

    The one-window solve marches the full generator from T* (terminal 0) down
    to ``t0``; the decomposed value is ``recursive_cost_field``. Both use the
    same grid, strategy and substeps, so the gap is pure discretization.
    """
    g, _, m = _plan(p, r, strategy, t0, grid, tol_tail, substeps)

    def full_source(s, x, u, v):
        return r.generator(t0, s, x, u, v)

    full = _march(p, g, strategy, g.t, np.zeros(g.n_x), full_source, m)
    split = recursive_cost_field(p, r, strategy, t0, grid, tol_tail, m)
    gap = np.abs(full[0] - split.values[0])
    if mask is not None:
        gap = gap[mask]
    return float(np.max(gap))


def _backward_exponential(delta, h, forcing):
    """Solve dY = (delta Y - f) ds backward from Y(end) = 0.

    Exact for f linear on each step (exponential integrator), so second order
    for smooth f.
    """
    decay = np.exp(-delta * h)
    i0 = -np.expm1(-delta * h) / delta
    i1 = (1.0 - decay * (1.0 + delta * h)) / (delta ** 2 * h)
    y = np.zeros_like(forcing)
    for k in range(len(forcing) - 2, -1, -1):
        y[k] = decay * y[k + 1] + forcing[k] * i0 + (forcing[k + 1] - forcing[k]) * i1
    return y


def tail_reduction_check(r: RecursiveCostSpec, times, states, controls, t):
    """Variation-of-constants identity on one sampled path.

    ``times`` is a uniform grid ending at the truncation horizon; ``states``
    and ``controls`` are the path values there. Compares the backward ODE
    solution at r = t + T0 against the quadrature
    int_r^H exp(-delta (s - r)) g0 ds and returns the absolute gap.
    """
    times = np.asarray(times, dtype=float)
    h = np.diff(times)
    if len(times) < 3 or np.ptp(h) > 1e-9 * max(1.0, abs(h[0])):
        raise DomainError("path must be sampled on a uniform grid with at least 3 points")
    r_time = t + r.T0
    j = int(round((r_time - times[0]) / h[0]))
    if j < 0 or j > len(times) - 3 or abs(times[j] - r_time) > TIME_TOL * max(1.0, r_time):
        raise DomainError(f"r = {r_time} is not an interior sample time")
    forcing = np.asarray(r.tail_generator(times, np.asarray(states), np.asarray(controls)),
                         dtype=float) * np.ones_like(times)
    y = _backward_exponential(r.delta, h[0], forcing[j:])
    direct = simpson(np.exp(-r.delta * (times[j:] - r_time)) * forcing[j:], x=times[j:])
    return float(abs(y[0] - direct))
