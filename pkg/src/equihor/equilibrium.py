"""Two-time equilibrium system on the pre-rational window and the glued solution.

Discretization of the system: all slices share the time grid
t_k = tau + k*dt, k = 0..N, which is also the anchor grid. Stepping from t_k
to t_{k-1}, the diagonal control is the argmin for slice k at t_k (weight
lambda(0) = 1, coefficients read at t_{k-1}); every slice j <= k-1 is then
advanced under that control with weight lambda(s - rho_j), read at each
substep's target time s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CompositionError, DomainError
from .model import DiscountSpec, ProblemSpec, discount_eval
from .pde import (TIME_TOL, Grid1D, StrategyTable, ValueField, cfl_steps, hjb_candidates,
                  linear_step)


@dataclass(frozen=True)
class BiTimeField:
    """Theta(rho_j, t_k, x_i) for j <= k; entries with j > k are NaN."""

    tau: float
    grid: Grid1D              # time grid [tau, tau + T0] with N steps
    values: np.ndarray        # shape (N+1, N+1, n_x)
    strategy: StrategyTable   # diagonal controls, row k governs [t_k, t_{k+1})

    @property
    def times(self):
        return self.grid.t

    @property
    def n_steps(self):
        return self.grid.n_t

    def slice(self, j):
        """Field of the self anchored at t_j over [t_j, tau + T0]."""
        return ValueField(self.grid, self.times[j:], self.values[j, j:])

    def diagonal(self):
        idx = np.arange(self.n_steps + 1)
        return self.values[idx, idx]

    def diagonal_field(self):
        return ValueField(self.grid, self.times, self.diagonal())

    def terminal(self):
        return self.values[:, -1]


@dataclass(frozen=True)
class GluedSolution:
    value: ValueField          # diagonal on [tau, tau+T0], exp(delta tau) V_delta after
    strategy: StrategyTable
    seam: float
    seam_left: np.ndarray
    seam_right: np.ndarray
    head_strategy: StrategyTable
    tail_strategy: StrategyTable


def _tail_start(tail_value: ValueField, t, grid):
    if not tail_value.grid.same_space(grid):
        raise CompositionError("tail field lives on a different spatial grid")
    if abs(tail_value.times[0] - t) > TIME_TOL * max(1.0, abs(t)):
        raise DomainError(f"tail field starts at {tail_value.times[0]}, need {t}")
    return tail_value.values[0]


def solve_equilibrium_system(p: ProblemSpec, d: DiscountSpec, tau, grid: Grid1D,
                             tail_value: ValueField):
    """March the equilibrium system backward from tau + T0 to tau.

    ``grid`` supplies the spatial grid and N = ``grid.n_t`` steps; its time
    window is replaced by [tau, tau + T0]. ``tail_value`` is the discounted
    tail field V_delta, whose first row must sit at tau + T0.
    """
    if d.T0 <= 0:
        raise DomainError("equilibrium window needs T0 > 0")
    if tail_value is None:
        raise DomainError("missing tail field")
    N = grid.n_t
    g = Grid1D(grid.x_min, grid.x_max, grid.n_x, tau, tau + d.T0, N)
    t = g.t
    terminal = np.exp(d.delta * tau) * _tail_start(tail_value, t[-1], g)

    theta = np.full((N + 1, N + 1, g.n_x), np.nan)
    theta[:, N] = terminal
    controls = np.empty((N, g.n_x))
    m = cfl_steps(p, g)
    h = g.dt / m
    for k in range(N, 0, -1):
        cand = hjb_candidates(p, g, theta[k, k], t[k - 1], 1.0, h)
        best = np.argmin(cand, axis=0)
        row = np.empty(g.n_x)
        row[1:-1] = p.control_grid[best]
        row[0], row[-1] = row[1], row[-2]
        controls[k - 1] = row
        anchors = t[:k]

        def weights(s, anchors=anchors):
            return discount_eval(d, np.maximum(s - anchors, 0.0))

        theta[:k, k - 1] = linear_step(p, g, theta[:k, k], t[k - 1], row, weights, substeps=m)
    strategy = StrategyTable(g, t[:-1], controls)
    return BiTimeField(tau, g, theta, strategy), strategy


def glue(theta: BiTimeField, tail_value: ValueField, tail_strategy: StrategyTable, tau, delta):
    """Equilibrium value and strategy on [tau, T*].

    The head piece is the diagonal of ``theta`` and its strategy; the tail
    piece is ``exp(delta tau) V_delta`` with the tail feedback table, copied
    unchanged.
    """
    g = theta.grid
    diag_strategy = theta.strategy
    seam = g.t_end
    if not diag_strategy.grid.same_space(g):
        raise CompositionError("diagonal strategy grid differs in space")
    if not tail_value.grid.same_space(g) or not tail_strategy.grid.same_space(g):
        raise CompositionError("equilibrium and tail grids differ in space")
    if abs(tail_value.times[0] - seam) > TIME_TOL * max(1.0, abs(seam)):
        raise CompositionError(f"tail starts at {tail_value.times[0]}, seam is at {seam}")
    scale = np.exp(delta * tau)
    tail_scaled = scale * tail_value.values
    diag = theta.diagonal()
    value = ValueField(tail_value.grid,
                       np.concatenate([theta.times[:-1], tail_value.times]),
                       np.vstack([diag[:-1], tail_scaled]))
    strategy = StrategyTable(tail_strategy.grid,
                             np.concatenate([diag_strategy.times, tail_strategy.times]),
                             np.vstack([diag_strategy.controls, tail_strategy.controls]))
    return GluedSolution(value=value, strategy=strategy, seam=seam, seam_left=diag[-1],
                         seam_right=tail_scaled[0], head_strategy=diag_strategy,
                         tail_strategy=tail_strategy)


def evaluate_strategy_value(p: ProblemSpec, d: DiscountSpec, tau, strategy: StrategyTable,
                            rho, grid: Grid1D, terminal):
    """Cost-to-go of the self anchored at ``rho`` when ``strategy`` is played.

    Linear backward sweep on the equilibrium time grid from tau + T0 down to
    ``rho`` (a grid node) with weight lambda(t - rho) and the given terminal
    values at tau + T0. Uses exactly the stepping of the equilibrium solver.
    """
    g = Grid1D(grid.x_min, grid.x_max, grid.n_x, tau, tau + d.T0, grid.n_t)
    t = g.t
    j = int(np.argmin(np.abs(t - rho)))
    if abs(t[j] - rho) > TIME_TOL * max(1.0, abs(rho)):
        raise DomainError(f"anchor {rho} is not a node of the equilibrium grid")
    m = cfl_steps(p, g)
    values = np.empty((g.n_t + 1 - j, g.n_x))
    values[-1] = np.asarray(terminal, dtype=float)

    def weight(s):
        return discount_eval(d, np.maximum(s - t[j], 0.0))

    for k in range(g.n_t, j, -1):
        values[k - 1 - j] = linear_step(p, g, values[k - j], t[k - 1],
                                        strategy.row(t[k - 1]), weight, substeps=m)
    return ValueField(g, t[j:], values)
