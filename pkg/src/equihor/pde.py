"""Explicit upwind finite differences for backward parabolic equations in 1-D.

Every step is written in the nonnegative-coefficient form

    v_i <- c0 v_i + cm v_{i-1} + cp v_{i+1} + h * source_i

with ``c0 = 1 - h (cm + cp) >= 0`` enforced by CFL substepping, so each step is
monotone in floating point as well as in exact arithmetic. Boundary nodes are
reset by linear extrapolation (zero second derivative) after every substep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, StabilityError
from .model import ProblemSpec

CFL_SAFETY = 0.9
TIME_TOL = 1e-9


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n_x: int
    t_start: float
    t_end: float
    n_t: int

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise DomainError("need x_min < x_max")
        if self.n_x < 3:
            raise DomainError("need at least 3 spatial nodes")
        if self.n_t < 1:
            raise DomainError("need at least one time step")
        if not self.t_end > self.t_start:
            raise DomainError("need t_end > t_start")

    @property
    def dx(self):
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def dt(self):
        return (self.t_end - self.t_start) / self.n_t

    @property
    def x(self):
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def t(self):
        return self.t_start + self.dt * np.arange(self.n_t + 1)

    def with_times(self, t_start, t_end, n_t=None):
        """Same spatial grid on a new time window (step kept close to ``dt``)."""
        if n_t is None:
            n_t = max(1, int(round((t_end - t_start) / self.dt)))
        return Grid1D(self.x_min, self.x_max, self.n_x, t_start, t_end, n_t)

    def same_space(self, other):
        return (self.x_min == other.x_min and self.x_max == other.x_max
                and self.n_x == other.n_x)

    def interior_mask(self, fraction=0.6):
        """Nodes in the central ``fraction`` of the spatial interval."""
        mid = 0.5 * (self.x_min + self.x_max)
        half = 0.5 * fraction * (self.x_max - self.x_min)
        x = self.x
        return (x >= mid - half - 1e-12) & (x <= mid + half + 1e-12)


@dataclass(frozen=True)
class ValueField:
    """Values tabulated on ``times`` (ascending) x the spatial grid."""

    grid: Grid1D
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if values.shape != (times.size, self.grid.n_x):
            raise DomainError(f"values shape {values.shape} does not match "
                              f"({times.size}, {self.grid.n_x})")
        if not np.all(np.isfinite(values)):
            raise StabilityError("value field contains non-finite entries")

    @property
    def x(self):
        return self.grid.x

    def index(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > TIME_TOL * max(1.0, abs(t)):
            raise DomainError(f"time {t} is not a node of this field")
        return k

    def at(self, t):
        return self.values[self.index(t)]

    def restrict(self, t0, t1):
        i0, i1 = self.index(t0), self.index(t1)
        return ValueField(self.grid, self.times[i0:i1 + 1], self.values[i0:i1 + 1])

    def interp(self, t, x):
        """Nearest time row, linear in x (constant beyond the grid ends)."""
        k = int(np.argmin(np.abs(self.times - t)))
        return np.interp(x, self.grid.x, self.values[k])

    def gradient(self, k, drift):
        """Upwind first derivative of row ``k``: forward where drift >= 0."""
        return upwind_gradient(self.values[k], self.grid.dx, drift)

    def hessian(self, k):
        return central_hessian(self.values[k], self.grid.dx)

    def scaled(self, factor):
        return ValueField(self.grid, self.times, factor * self.values)


@dataclass(frozen=True)
class StrategyTable:
    """Feedback controls; row ``k`` applies on ``[times[k], times[k+1])``."""

    grid: Grid1D
    times: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        controls = np.asarray(self.controls, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "controls", controls)
        if controls.shape != (times.size, self.grid.n_x):
            raise DomainError("strategy shape does not match its grid")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise DomainError("strategy times must be strictly ascending")

    def row_index(self, t):
        """Row governing time ``t``; clipped to the table."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t + TIME_TOL * np.maximum(1.0, np.abs(t)),
                            side="right") - 1
        return np.clip(k, 0, self.times.size - 1)

    def row(self, t):
        return self.controls[int(self.row_index(t))]

    def lookup(self, t, x):
        """Control at time ``t`` for states ``x``: nearest node in space.

        When the two bracketing nodes agree that shared value is used, which
        is the same as nearest-node lookup on a discrete control set.
        """
        row = self.row(t)
        g = self.grid
        pos = (np.asarray(x, dtype=float) - g.x_min) / g.dx
        lo = np.clip(np.floor(pos).astype(int), 0, g.n_x - 1)
        hi = np.clip(lo + 1, 0, g.n_x - 1)
        nearest = np.clip(np.rint(pos).astype(int), 0, g.n_x - 1)
        return np.where(row[lo] == row[hi], row[lo], row[nearest])

    def restrict(self, t0, t1):
        keep = (self.times >= t0 - TIME_TOL) & (self.times < t1 - TIME_TOL)
        return StrategyTable(self.grid, self.times[keep], self.controls[keep])

    def with_rows(self, rows, value):
        """Copy with ``controls[rows] = value`` (used for spike perturbations)."""
        controls = self.controls.copy()
        controls[rows] = value
        return StrategyTable(self.grid, self.times, controls)


def upwind_gradient(v, dx, drift):
    v = np.asarray(v, dtype=float)
    fwd = np.empty_like(v)
    bwd = np.empty_like(v)
    fwd[:-1] = (v[1:] - v[:-1]) / dx
    fwd[-1] = fwd[-2]
    bwd[1:] = (v[1:] - v[:-1]) / dx
    bwd[0] = bwd[1]
    return np.where(np.asarray(drift) >= 0, fwd, bwd)


def central_hessian(v, dx):
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    out[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / dx ** 2
    return out


def cfl_steps(p: ProblemSpec, grid: Grid1D, n_time_samples=33):
    """Smallest substep count keeping each explicit substep monotone."""
    x = grid.x
    u = p.control_grid[:, None]
    sig2_max, b_max = 0.0, 0.0
    for t in np.linspace(grid.t_start, grid.t_end, n_time_samples):
        sig2_max = max(sig2_max, float(np.max(np.broadcast_to(p.diffusion(t, x, u), (u.size, x.size)) ** 2)))
        b_max = max(b_max, float(np.max(np.abs(np.broadcast_to(p.drift(t, x, u), (u.size, x.size))))))
    bound = CFL_SAFETY * grid.dx ** 2 / (sig2_max + b_max * grid.dx)
    m = max(1, math.ceil(grid.dt / bound))
    while m > 1 and grid.dt / (m - 1) <= bound:
        m -= 1
    return m


def _coefficients(p, x_in, t, u, dx):
    """Neighbour weights (per unit time) for interior nodes; u broadcasts against x_in."""
    b = p.drift(t, x_in, u)
    sig = p.diffusion(t, x_in, u)
    diff = 0.5 * sig * sig / dx ** 2
    cm = diff + np.maximum(-b, 0.0) / dx
    cp = diff + np.maximum(b, 0.0) / dx
    return cm, cp


def _apply(v, cm, cp, source, h):
    """One monotone substep on the interior; ``v`` has shape (..., n_x)."""
    left, mid, right = v[..., :-2], v[..., 1:-1], v[..., 2:]
    return (1.0 - h * (cm + cp)) * mid + (h * cm) * left + (h * cp) * right + h * source


def _extrapolate(v):
    v[..., 0] = 2.0 * v[..., 1] - v[..., 2]
    v[..., -1] = 2.0 * v[..., -2] - v[..., -3]
    return v


def _check_finite(v, t):
    if not np.all(np.isfinite(v)):
        idx = np.argwhere(~np.isfinite(v))[0]
        raise StabilityError(f"non-finite value at t={t:.6g}, cell {tuple(int(i) for i in idx)}",
                             time=t, index=tuple(int(i) for i in idx))


def _substep_times(t_next, t_k, m):
    h = (t_next - t_k) / m
    return h, [t_next - (j + 1) * h for j in range(m - 1)] + [t_k]


def hjb_candidates(p, grid, v, t, weight, h):
    """Candidate updated interior values for every control, shape (n_u, n_x-2)."""
    x_in = grid.x[1:-1]
    u = p.control_grid[:, None]
    cm, cp = _coefficients(p, x_in, t, u, grid.dx)
    w = np.broadcast_to(np.asarray(weight, dtype=float), x_in.shape) if np.ndim(weight) else weight
    source = w * p.base_cost(t, x_in, u)
    return _apply(v, cm, cp, source, h)


def hjb_step(p: ProblemSpec, grid: Grid1D, next_slice, t_k, weight_fn, substeps=None):
    """Backward HJB step from ``t_k + grid.dt`` to ``t_k``.

    ``weight_fn(t, x)`` multiplies g0 and is read at each substep's target
    time. Returns the new slice and the controls selected in the last substep
    (smallest control on ties).
    """
    m = cfl_steps(p, grid) if substeps is None else int(substeps)
    v = np.array(next_slice, dtype=float)
    x_in = grid.x[1:-1]
    h, times = _substep_times(t_k + grid.dt, t_k, m)
    controls = np.empty(grid.n_x)
    for t in times:
        cand = hjb_candidates(p, grid, v, t, weight_fn(t, x_in), h)
        best = np.argmin(cand, axis=0)
        new = v.copy()
        new[1:-1] = np.take_along_axis(cand, best[None, :], axis=0)[0]
        v = _extrapolate(new)
        _check_finite(v, t)
        controls[1:-1] = p.control_grid[best]
    controls[0], controls[-1] = controls[1], controls[-2]
    return v, controls


def semilinear_step(p: ProblemSpec, grid: Grid1D, next_slice, t_k, control_slice,
                    source_fn, substeps=None):
    """Backward step under fixed controls with a value-dependent source.

    ``source_fn(t, x, u, v)`` is evaluated on interior nodes at each substep's
    target time with ``v`` the current substep values.
    """
    m = cfl_steps(p, grid) if substeps is None else int(substeps)
    u = np.asarray(control_slice, dtype=float)
    if not np.all(np.isin(u, p.control_grid)):
        raise DomainError("control slice has entries off the control grid")
    v = np.array(next_slice, dtype=float)
    x_in, u_in = grid.x[1:-1], u[1:-1]
    h, times = _substep_times(t_k + grid.dt, t_k, m)
    for t in times:
        cm, cp = _coefficients(p, x_in, t, u_in, grid.dx)
        new = v.copy()
        new[..., 1:-1] = _apply(v, cm, cp, source_fn(t, x_in, u_in, v[..., 1:-1]), h)
        v = _extrapolate(new)
        _check_finite(v, t)
    return v


def linear_step(p: ProblemSpec, grid: Grid1D, next_slice, t_k, control_slice, weight,
                substeps=None):
    """Backward step under fixed controls with source ``weight * g0``.

    ``next_slice`` may carry leading axes (several slices stepped together);
    ``weight`` then broadcasts against them, one scalar per slice. A callable
    ``weight(t)`` is read at each substep's target time.
    """
    def as_column(w):
        w = np.asarray(w, dtype=float)
        if np.any(w < 0):
            raise DomainError("weight must be nonnegative")
        return w[..., None] if w.ndim else w

    if callable(weight):
        def source(t, x, u, v):
            return as_column(weight(t)) * p.base_cost(t, x, u)
    else:
        w = as_column(weight)

        def source(t, x, u, v):
            return w * p.base_cost(t, x, u)

    return semilinear_step(p, grid, next_slice, t_k, control_slice, source, substeps)
