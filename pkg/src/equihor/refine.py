"""Grid refinement studies: Richardson error estimates and observed orders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pde import Grid1D


def refine_grid(grid: Grid1D, factor=2):
    """Same window with dx and dt divided by ``factor``."""
    return Grid1D(grid.x_min, grid.x_max, (grid.n_x - 1) * factor + 1,
                  grid.t_start, grid.t_end, grid.n_t * factor)


def on_coarse_nodes(values, coarse: Grid1D, fine: Grid1D):
    """Restrict fine-grid spatial values to the coarse nodes."""
    stride = (fine.n_x - 1) // (coarse.n_x - 1)
    if (coarse.n_x - 1) * stride != fine.n_x - 1:
        raise ValueError("fine grid does not nest the coarse grid")
    return np.asarray(values)[..., ::stride]


def richardson_error(coarse, fine, order=1.0, mask=None):
    """Error estimate for the coarse solution: 2^p/(2^p - 1) sup|coarse - fine|."""
    diff = np.abs(np.asarray(coarse) - np.asarray(fine))
    if mask is not None:
        diff = diff[..., mask]
    return float(2 ** order / (2 ** order - 1) * np.max(diff))


def observed_orders(errors, ratio=2.0):
    errors = np.asarray(errors, dtype=float)
    return np.log(errors[:-1] / errors[1:]) / np.log(ratio)


@dataclass(frozen=True)
class RefinementStudy:
    grids: list
    samples: list          # each on the coarsest spatial nodes
    differences: np.ndarray  # sup|level k - level k+1| over the mask
    errors: np.ndarray     # against ``exact`` when given, else the differences
    orders: np.ndarray

    @property
    def grid_err(self):
        """Richardson estimate (first order) of the coarsest level's error."""
        return 2.0 * float(self.differences[0])

    def table(self):
        rows = []
        for k, g in enumerate(self.grids):
            rows.append({
                "level": k,
                "n_x": g.n_x,
                "n_t": g.n_t,
                "dx": g.dx,
                "dt": g.dt,
                "error": float(self.errors[k]) if k < len(self.errors) else float("nan"),
            })
        return rows


def run_study(solve, grid: Grid1D, n_levels=3, exact=None, mask_fraction=0.6):
    """Solve on ``n_levels`` nested grids and compare on the coarse nodes.

    ``solve(grid)`` returns spatial values on ``grid``'s nodes (any fixed
    time slice). ``exact`` (values on the coarse nodes) switches the error
    column from successive differences to true errors.
    """
    grids = [grid]
    for _ in range(n_levels - 1):
        grids.append(refine_grid(grids[-1]))
    mask = grid.interior_mask(mask_fraction)
    samples = [on_coarse_nodes(solve(g), grid, g) for g in grids]
    diffs = np.array([np.max(np.abs(a - b)[..., mask]) for a, b in zip(samples, samples[1:])])
    if exact is not None:
        errors = np.array([np.max(np.abs(s - exact)[..., mask]) for s in samples])
    else:
        errors = diffs
    return RefinementStudy(grids=grids, samples=samples, differences=diffs, errors=errors,
                           orders=observed_orders(errors))
