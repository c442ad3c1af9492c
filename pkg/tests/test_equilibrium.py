import numpy as np
import pytest

from equihor import (DiscountSpec, Grid1D, StrategyTable, catalog_problem, evaluate_strategy_value, glue,
                     precommit_value, solve_discounted_tail, solve_equilibrium_system, zero_cost_problem)
from equihor.errors import CompositionError, DomainError
from equihor.pde import cfl_steps, hjb_step

DELTA, T0 = 0.5, 1.0
HYP = DiscountSpec.matched_hyperbolic(DELTA, T0)


@pytest.fixture(scope="module")
def catalog_run():
    p = catalog_problem()
    grid = Grid1D(-4, 4, 61, 0.0, T0, 20)
    tail, tail_strategy = solve_discounted_tail(p, DELTA, T0, grid, 1e-3)
    theta, strategy = solve_equilibrium_system(p, HYP, 0.0, grid, tail)
    return p, grid, tail, tail_strategy, theta, strategy


def test_zero_cost_gives_zero_and_tie_break():
    p = zero_cost_problem()
    grid = Grid1D(-3, 3, 31, 0.0, T0, 10)
    tail, _ = solve_discounted_tail(p, DELTA, T0, grid, 1e-4)
    theta, strategy = solve_equilibrium_system(p, HYP, 0.0, grid, tail)
    upper = np.triu_indices(11)
    assert np.all(theta.values[upper] == 0.0)
    assert np.all(strategy.controls == p.control_grid[0])


def test_single_step_matches_hjb_step():
    p = catalog_problem()
    d = DiscountSpec.matched_hyperbolic(DELTA, 0.01)
    grid = Grid1D(-4, 4, 41, 0.0, 0.01, 1)
    assert cfl_steps(p, grid) == 1
    tail, _ = solve_discounted_tail(p, DELTA, 0.01, grid, 1e-2)
    theta, strategy = solve_equilibrium_system(p, d, 0.0, grid, tail)
    v, u = hjb_step(p, grid, tail.values[0], 0.0, lambda t, x: np.ones_like(x), substeps=1)
    np.testing.assert_array_equal(theta.values[0, 0], v)
    np.testing.assert_array_equal(strategy.controls[0], u)


def test_needs_positive_delay():
    p = catalog_problem()
    grid = Grid1D(-4, 4, 41, 0.0, 1.0, 10)
    tail, _ = solve_discounted_tail(p, DELTA, 0.0, grid, 1e-2)
    with pytest.raises(DomainError):
        solve_equilibrium_system(p, DiscountSpec.exponential(DELTA), 0.0, grid, tail)


def test_tail_must_start_at_seam():
    p = catalog_problem()
    grid = Grid1D(-4, 4, 41, 0.0, 1.0, 10)
    tail, _ = solve_discounted_tail(p, DELTA, 0.5, grid, 1e-2)
    with pytest.raises(DomainError):
        solve_equilibrium_system(p, HYP, 0.0, grid, tail)


def test_later_anchors_weigh_costs_more(catalog_run):
    _, _, _, _, theta, _ = catalog_run
    N = theta.n_steps
    for k in range(N + 1):
        col = theta.values[: k + 1, k]
        assert np.all(np.diff(col, axis=0) >= -1e-14)


def test_value_sandwich(catalog_run):
    p, grid, tail, _, theta, _ = catalog_run
    # the tau-self cannot beat its own pre-committed optimum, and costs are nonnegative
    pre, _ = precommit_value(p, HYP, 0.0, T0, grid, terminal=tail.values[0])
    assert np.all(theta.values[0, 0] >= pre.values[0] - 1e-12)
    assert np.all(theta.values[0, 0] >= 0.0)


def test_evaluation_reproduces_first_slice(catalog_run):
    p, grid, tail, _, theta, strategy = catalog_run
    field = evaluate_strategy_value(p, HYP, 0.0, strategy, 0.0, grid, tail.values[0])
    np.testing.assert_array_equal(field.values, theta.values[0])


def test_worse_constant_strategy_costs_more(catalog_run):
    p, grid, tail, _, theta, strategy = catalog_run
    mask = grid.interior_mask(0.6)
    worst = StrategyTable(strategy.grid, strategy.times, np.full_like(strategy.controls, -1.0))
    field = evaluate_strategy_value(p, HYP, 0.0, worst, 0.0, grid, tail.values[0])
    assert np.all(field.values[0][mask] >= theta.values[0, 0][mask] - 1e-3)


def test_zero_cost_evaluation_is_zero():
    p = zero_cost_problem()
    grid = Grid1D(-3, 3, 31, 0.0, T0, 10)
    table = StrategyTable(grid, grid.t[:-1], np.zeros((10, 31)))
    field = evaluate_strategy_value(p, HYP, 0.0, table, 0.3, grid, np.zeros(31))
    assert np.all(field.values == 0.0)


def test_glue_is_continuous_at_seam(catalog_run):
    _, _, tail, tail_strategy, theta, _ = catalog_run
    glued = glue(theta, tail, tail_strategy, 0.0, DELTA)
    np.testing.assert_array_equal(glued.seam_left, glued.seam_right)
    assert glued.seam == pytest.approx(T0)
    assert glued.strategy.times.size == theta.n_steps + tail_strategy.times.size


def test_glue_rejects_mismatched_grid(catalog_run):
    p, _, _, _, theta, _ = catalog_run
    other = Grid1D(-4, 4, 41, 0.0, T0, 20)
    tail, tail_strategy = solve_discounted_tail(p, DELTA, T0, other, 1e-2)
    with pytest.raises(CompositionError):
        glue(theta, tail, tail_strategy, 0.0, DELTA)
