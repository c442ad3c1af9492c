"""Problem data: dynamics, costs, discount functions and the pointwise Hamiltonian.

All callables are expected to broadcast over numpy arrays: ``drift(s, x, u)``
with ``x`` of shape ``(n_x,)`` and ``u`` of shape ``(n_u, 1)`` must return an
``(n_u, n_x)`` array. The catalog constructors below satisfy this.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, UnsupportedProblemError

SPLICE_TOL = 1e-12
TWO_TIME_TOL = 1e-10


@dataclass(frozen=True)
class DiscountSpec:
    """Discount function that is exponential with rate ``delta`` after ``T0``.

    ``head`` gives the weight on ``[0, T0]``; it must start at 1, decrease
    strictly, and meet ``exp(-delta*T0)`` at the splice.
    """

    T0: float
    delta: float
    head: Callable = field(compare=False)
    kind: str = "custom"

    def __post_init__(self):
        if self.T0 < 0:
            raise DomainError(f"T0 must be nonnegative, got {self.T0}")
        if self.delta <= 0:
            raise DomainError(f"delta must be positive, got {self.delta}")

    @classmethod
    def exponential(cls, delta, T0=0.0):
        return cls(T0=float(T0), delta=float(delta),
                   head=lambda tau: np.exp(-delta * np.asarray(tau, dtype=float)),
                   kind="exponential")

    @classmethod
    def matched_hyperbolic(cls, delta, T0):
        """Hyperbolic head ``1/(1 + k*tau)`` with ``k`` chosen to splice continuously."""
        if T0 <= 0:
            raise DomainError("matched hyperbolic discount needs T0 > 0")
        k = np.expm1(delta * T0) / T0
        return cls(T0=float(T0), delta=float(delta),
                   head=lambda tau: 1.0 / (1.0 + k * np.asarray(tau, dtype=float)),
                   kind="hyperbolic")

    @property
    def hyperbolic_rate(self):
        return float(np.expm1(self.delta * self.T0) / self.T0) if self.T0 > 0 else 0.0

    def __call__(self, tau):
        return discount_eval(self, tau)


def discount_eval(d: DiscountSpec, tau):
    """Weight of a cost incurred ``tau`` time units after the evaluating self."""
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr < 0) or not np.all(np.isfinite(tau_arr)):
        raise DomainError(f"discount lag must be finite and nonnegative, got {tau}")
    tail = np.exp(-d.delta * tau_arr)
    if d.T0 > 0:
        out = np.where(tau_arr < d.T0, d.head(np.minimum(tau_arr, d.T0)), tail)
    else:
        out = tail
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ProblemSpec:
    """Controlled 1-D diffusion with a nonnegative running cost.

    ``base_cost`` is g0(s, x, u). ``running_cost`` is the optional two-time
    cost g(rho, s, x, u); when absent the solvers use ``weight * base_cost``.
    ``cost_bound`` is the integrable envelope phi(s) (assumed nonincreasing)
    and ``cost_tail(T)`` its closed-form tail integral over ``[T, inf)``.
    """

    drift: Callable
    diffusion: Callable
    base_cost: Callable
    cost_bound: Callable
    control_grid: np.ndarray
    epsilon: float
    cost_tail: Optional[Callable] = None
    running_cost: Optional[Callable] = None
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        grid = np.asarray(self.control_grid, dtype=float).ravel()
        object.__setattr__(self, "control_grid", grid)
        if grid.size == 0:
            raise DomainError("control grid is empty")
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise DomainError("control grid must be strictly ascending")
        if not self.epsilon > 0:
            raise DomainError("epsilon floor must be positive")

    def shifted(self, t_shift):
        """Same problem with every coefficient read at ``s + t_shift``."""
        b, s, g, phi = self.drift, self.diffusion, self.base_cost, self.cost_bound
        tail = self.cost_tail
        return replace(
            self,
            drift=lambda t, x, u: b(t + t_shift, x, u),
            diffusion=lambda t, x, u: s(t + t_shift, x, u),
            base_cost=lambda t, x, u: g(t + t_shift, x, u),
            cost_bound=lambda t: phi(t + t_shift),
            cost_tail=None if tail is None else (lambda T: tail(T + t_shift)),
            running_cost=None,
            name=f"{self.name}+shift({t_shift})",
        )

    def with_product_cost(self, d: DiscountSpec):
        """Attach the two-time cost ``lambda(s - rho) * g0(s, x, u)``."""
        g0 = self.base_cost

        def running(rho, s, x, u):
            return discount_eval(d, np.asarray(s) - np.asarray(rho)) * g0(s, x, u)

        return replace(self, running_cost=running)

    def cost_sup(self, t_from=0.0):
        """Sup of g0 over ``[t_from, inf)``, read off the nonincreasing envelope."""
        return float(self.cost_bound(t_from))


def catalog_problem(beta0=0.0, beta1=-1.0, beta2=0.8, sigma0=0.8, sigma1=0.2,
                    a=1.0, c=0.1, rho=0.3, x_star=1.0, u_max=1.0, n_controls=5,
                    epsilon=0.25):
    """Smooth bounded test family.

    b = beta0 + beta1 tanh(x) + beta2 u, sigma = sigma0 + sigma1 tanh(x),
    g0 = exp(-rho s) (a tanh^2(x - x_star) + c (u/u_max)^2).
    """
    if sigma0 <= abs(sigma1) + np.sqrt(epsilon):
        raise DomainError("catalog needs sigma0 > |sigma1| + sqrt(epsilon)")
    if rho <= 0:
        raise DomainError("catalog needs rho > 0 for an integrable envelope")

    def drift(s, x, u):
        return beta0 + beta1 * np.tanh(x) + beta2 * u + 0.0 * s

    def diffusion(s, x, u):
        return sigma0 + sigma1 * np.tanh(x) + 0.0 * u + 0.0 * s

    def base_cost(s, x, u):
        return np.exp(-rho * s) * (a * np.tanh(x - x_star) ** 2 + c * (u / u_max) ** 2)

    return ProblemSpec(
        drift=drift,
        diffusion=diffusion,
        base_cost=base_cost,
        cost_bound=lambda s: (a + c) * np.exp(-rho * np.asarray(s, dtype=float)),
        cost_tail=lambda T: (a + c) * np.exp(-rho * np.asarray(T, dtype=float)) / rho,
        control_grid=np.linspace(-u_max, u_max, n_controls),
        epsilon=epsilon,
        name="catalog",
        params=dict(beta0=beta0, beta1=beta1, beta2=beta2, sigma0=sigma0, sigma1=sigma1,
                    a=a, c=c, rho=rho, x_star=x_star, u_max=u_max,
                    n_controls=n_controls, epsilon=epsilon),
    )


def zero_cost_problem(sigma0=0.8, n_controls=5, epsilon=0.25):
    """Catalog dynamics with g0 = 0."""
    p = catalog_problem(sigma0=sigma0, sigma1=0.0, n_controls=n_controls, epsilon=epsilon)
    return replace(p, base_cost=lambda s, x, u: 0.0 * (x + u + s),
                   cost_bound=lambda s: 0.0 * np.asarray(s, dtype=float),
                   cost_tail=lambda T: 0.0 * np.asarray(T, dtype=float),
                   name="zero",
                   params=dict(sigma0=sigma0, n_controls=n_controls, epsilon=epsilon))


def exponential_cost_problem(rate=1.0, scale=1.0, sigma0=0.8, n_controls=5, epsilon=0.25):
    """Catalog dynamics with x,u-independent cost ``scale * exp(-rate s)``."""
    p = catalog_problem(sigma0=sigma0, sigma1=0.0, n_controls=n_controls, epsilon=epsilon)
    return replace(
        p,
        base_cost=lambda s, x, u: scale * np.exp(-rate * s) + 0.0 * (x + u),
        cost_bound=lambda s: scale * np.exp(-rate * np.asarray(s, dtype=float)),
        cost_tail=lambda T: scale * np.exp(-rate * np.asarray(T, dtype=float)) / rate,
        name="exp-cost",
        params=dict(rate=rate, scale=scale, sigma0=sigma0, n_controls=n_controls, epsilon=epsilon),
    )


def _check_control(p: ProblemSpec, u):
    u_arr = np.asarray(u, dtype=float)
    if not np.all(np.isin(u_arr, p.control_grid)):
        raise DomainError(f"control {u} is not on the control grid")


def hamiltonian(p: ProblemSpec, t, x, u, grad, hess, weight):
    """grad*b + 0.5*sigma^2*hess + weight*g0 at a single control value."""
    _check_control(p, u)
    if np.any(np.asarray(weight) < 0):
        raise DomainError("weight must be nonnegative")
    sig = p.diffusion(t, x, u)
    return grad * p.drift(t, x, u) + 0.5 * sig * sig * hess + weight * p.base_cost(t, x, u)


def argmin_control(p: ProblemSpec, t, x, grad, hess, weight):
    """Exhaustive scan of the control grid; ties go to the smallest control."""
    values = [hamiltonian(p, t, x, u, grad, hess, weight) for u in p.control_grid]
    return float(p.control_grid[int(np.argmin(values))])


def tail_bound(p: ProblemSpec, T):
    """Integral of the cost envelope over ``[T, inf)``."""
    if np.any(np.asarray(T) < 0):
        raise DomainError("tail start must be nonnegative")
    if p.cost_tail is None:
        raise UnsupportedProblemError(f"problem {p.name!r} has no closed-form tail map")
    out = p.cost_tail(T)
    return float(out) if np.ndim(out) == 0 else np.asarray(out, dtype=float)


@dataclass(frozen=True)
class Violation:
    check: str
    message: str
    point: tuple = ()


def validate_problem(p: ProblemSpec, d: DiscountSpec, n_samples=2000, seed=0,
                     t_max=30.0, x_range=(-6.0, 6.0)):
    """Sample the structural hypotheses; returns a list of violations (empty if clean)."""
    if n_samples <= 0:
        raise DomainError("sample budget must be positive")
    rng = np.random.default_rng(seed)
    report = []
    s = rng.uniform(0.0, t_max, n_samples)
    x = rng.uniform(*x_range, n_samples)
    u = rng.choice(p.control_grid, n_samples)

    sig2 = np.asarray(p.diffusion(s, x, u), dtype=float) ** 2
    bad = np.flatnonzero(sig2 < p.epsilon)
    if bad.size:
        i = bad[0]
        report.append(Violation("non-degeneracy",
                                f"sigma^2={sig2[i]:.6g} < epsilon={p.epsilon:.6g} "
                                f"at {bad.size} of {n_samples} samples",
                                (s[i], x[i], u[i])))

    phi = np.asarray(p.cost_bound(s), dtype=float)
    rho_anchor = s - rng.uniform(0.0, np.minimum(s, d.T0 + 5.0))
    if p.running_cost is not None:
        g = np.asarray(p.running_cost(rho_anchor, s, x, u), dtype=float)
    else:
        g = np.asarray(p.base_cost(s, x, u), dtype=float)
    bad = np.flatnonzero((g < 0) | (g > phi * (1 + 1e-12)))
    if bad.size:
        i = bad[0]
        report.append(Violation("cost-envelope",
                                f"running cost {g[i]:.6g} outside [0, phi={phi[i]:.6g}] "
                                f"at {bad.size} samples", (s[i], x[i], u[i])))

    if p.running_cost is not None:
        lag = d.T0 + rng.uniform(0.0, 10.0, n_samples)
        anchor = rng.uniform(0.0, t_max, n_samples)
        lhs = np.asarray(p.running_cost(anchor, anchor + lag, x, u), dtype=float)
        rhs = np.exp(-d.delta * lag) * np.asarray(p.base_cost(anchor + lag, x, u), dtype=float)
        bad = np.flatnonzero(np.abs(lhs - rhs) > TWO_TIME_TOL)
        if bad.size:
            i = bad[0]
            report.append(Violation("two-time-tail",
                                    f"g(rho,s,.) != exp(-delta(s-rho)) g0 beyond T0 "
                                    f"(|diff|={abs(lhs[i] - rhs[i]):.3g})",
                                    (anchor[i], anchor[i] + lag[i], x[i], u[i])))

    taus = np.linspace(0.0, d.T0 + 5.0, 2001)
    lam = np.asarray(discount_eval(d, taus))
    if abs(lam[0] - 1.0) > SPLICE_TOL:
        report.append(Violation("discount-origin", f"lambda(0)={lam[0]!r} != 1"))
    if np.any(np.diff(lam) >= 0):
        i = int(np.flatnonzero(np.diff(lam) >= 0)[0])
        report.append(Violation("discount-monotone",
                                f"lambda not strictly decreasing near tau={taus[i]:.4g}",
                                (taus[i],)))
    if d.T0 > 0:
        head_end = float(d.head(d.T0))
        target = float(np.exp(-d.delta * d.T0))
        if abs(head_end - target) > SPLICE_TOL:
            report.append(Violation("discount-splice",
                                    f"head(T0)={head_end:.15g} != exp(-delta T0)={target:.15g}",
                                    (d.T0,)))

    if p.cost_tail is not None:
        Ts = np.linspace(0.0, t_max, 301)
        tails = np.asarray(p.cost_tail(Ts), dtype=float)
        if np.any(np.diff(tails) > 0) or np.any(tails < 0):
            report.append(Violation("tail-monotone", "tail map not nonincreasing and nonnegative"))
        far = float(p.cost_tail(1e3 * max(t_max, 1.0)))
        if far > 1e-8 * max(float(tails[0]), 1.0):
            report.append(Violation("tail-decay", f"tail map does not vanish (tail(far)={far:.3g})"))
    return report
