import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings, strategies as st

from equihor import Grid1D, ProblemSpec, catalog_problem, zero_cost_problem
from equihor.errors import DomainError, StabilityError
from equihor.pde import cfl_steps, hjb_step, linear_step


def flat_problem(sigma=1.0, cost=lambda s, x, u: 0.0 * (x + u)):
    return ProblemSpec(
        drift=lambda s, x, u: 0.0 * (x + u),
        diffusion=lambda s, x, u: sigma + 0.0 * (x + u),
        base_cost=cost,
        cost_bound=lambda s: 1.0 + 0.0 * np.asarray(s, dtype=float),
        control_grid=[-1.0, 0.0, 1.0],
        epsilon=0.25 * sigma ** 2,
    )


def unit(t, x):
    return np.ones_like(x)


@pytest.mark.parametrize("dt, expected", [(0.001, 1), (0.02, 3)])
def test_cfl_examples(dt, expected):
    grid = Grid1D(-1.0, 1.0, 21, 0.0, dt, 1)
    assert grid.dx == pytest.approx(0.1)
    assert cfl_steps(flat_problem(), grid) == expected


def test_cfl_floor_is_one():
    grid = Grid1D(-1.0, 1.0, 21, 0.0, 1e-5, 1)
    assert cfl_steps(flat_problem(0.5), grid) == 1


def test_hjb_zero_is_fixed_point():
    p = zero_cost_problem()
    grid = Grid1D(-3, 3, 61, 0.0, 0.1, 1)
    v, u = hjb_step(p, grid, np.zeros(grid.n_x), 0.0, unit)
    assert np.all(v == 0.0)
    assert np.all(u == p.control_grid[0])


@pytest.mark.parametrize("t_k", [0.0, 1.3])
def test_hjb_one_step_time_only_cost(t_k):
    p = catalog_problem()
    p = replace(p, base_cost=lambda s, x, u: np.exp(-s) + 0.0 * (x + u))
    dt = 0.01
    grid = Grid1D(-3, 3, 61, t_k, t_k + dt, 1)
    v, _ = hjb_step(p, grid, np.zeros(grid.n_x), t_k, unit)
    # exact one-step integral; the scheme is first order in dt
    exact = np.exp(-t_k) - np.exp(-(t_k + dt))
    assert np.max(np.abs(v - exact)) <= dt ** 2


def test_hjb_symmetric_about_target():
    p = catalog_problem(beta0=0.0, beta1=0.0, sigma1=0.0, x_star=0.0)
    grid = Grid1D(-2.0, 2.0, 81, 0.0, 0.05, 1)
    v = np.tanh(grid.x) ** 2
    for k in range(5):
        v, _ = hjb_step(p, grid, v, 0.0, unit)
    assert np.max(np.abs(v - v[::-1])) <= 1e-10


def test_linear_keeps_constants():
    p = flat_problem(0.7, cost=lambda s, x, u: 1.0 + x ** 2 + 0.0 * u)
    grid = Grid1D(-2, 2, 41, 0.0, 0.1, 1)
    out = linear_step(p, grid, np.full(grid.n_x, 2.5), 0.0, np.zeros(grid.n_x), 0.0)
    np.testing.assert_allclose(out, 2.5, atol=1e-14)


def test_linear_with_hjb_controls_reproduces_hjb():
    p = catalog_problem()
    grid = Grid1D(-4, 4, 101, 0.0, 0.05, 1)
    nxt = np.tanh(grid.x - 0.5) ** 2
    v, u = hjb_step(p, grid, nxt, 0.0, unit, substeps=1)
    w = linear_step(p, grid, nxt, 0.0, u, 1.0, substeps=1)
    np.testing.assert_array_equal(v, w)


def test_linear_one_step_unit_cost():
    p = flat_problem(cost=lambda s, x, u: 1.0 + 0.0 * (x + u))
    grid = Grid1D(-1, 1, 21, 0.0, 0.02, 1)
    out = linear_step(p, grid, np.zeros(grid.n_x), 0.0, np.zeros(grid.n_x), 1.0)
    np.testing.assert_allclose(out, 0.02, rtol=1e-12)


def test_linear_rejects_negative_weight():
    p = catalog_problem()
    grid = Grid1D(-1, 1, 21, 0.0, 0.02, 1)
    with pytest.raises(DomainError):
        linear_step(p, grid, np.zeros(grid.n_x), 0.0, np.zeros(grid.n_x), -1.0)


def test_linear_rejects_off_grid_controls():
    p = catalog_problem()
    grid = Grid1D(-1, 1, 21, 0.0, 0.02, 1)
    with pytest.raises(DomainError):
        linear_step(p, grid, np.zeros(grid.n_x), 0.0, np.full(grid.n_x, 0.3), 1.0)


def test_blow_up_raises_stability_error():
    p = catalog_problem()
    grid = Grid1D(-4, 4, 401, 0.0, 0.5, 1)
    with pytest.raises(StabilityError), np.errstate(over="ignore", invalid="ignore"):
        v = np.tanh(grid.x) ** 2 + 0.01 * (-1.0) ** np.arange(grid.n_x)
        for _ in range(200):
            v, _ = hjb_step(p, grid, v, 0.0, unit, substeps=1)


@given(st.integers(0, 4), st.floats(0.0, 2.0))
@settings(max_examples=25, deadline=None)
def test_hjb_below_any_fixed_control(u_index, weight):
    p = catalog_problem()
    grid = Grid1D(-4, 4, 81, 0.0, 0.05, 1)
    nxt = np.tanh(grid.x + 0.3) ** 2
    v, _ = hjb_step(p, grid, nxt, 0.0, lambda t, x: np.full_like(x, weight))
    fixed = np.full(grid.n_x, p.control_grid[u_index])
    w = linear_step(p, grid, nxt, 0.0, fixed, weight)
    assert np.all(v[1:-1] <= w[1:-1] + 1e-14)


@given(st.floats(0.0, 0.5))
@settings(max_examples=25, deadline=None)
def test_comparison_principle(bump):
    p = catalog_problem()
    grid = Grid1D(-4, 4, 81, 0.0, 0.05, 1)
    lo = np.tanh(grid.x) ** 2
    hi = lo + bump * np.exp(-grid.x ** 2)
    v_lo, _ = hjb_step(p, grid, lo, 0.0, unit)
    v_hi, _ = hjb_step(p, grid, hi, 0.0, unit)
    assert np.all(v_hi[1:-1] >= v_lo[1:-1] - 1e-14)
