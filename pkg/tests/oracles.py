"""Independent reference computations used to pin test expectations.

Nothing here imports the package's solvers. The lattice dynamic program is a
Markov-chain approximation with explicit transition matrices and reflecting
ends, written from scratch on a coarse grid.
"""

import numpy as np


def catalog_coefficients(beta0=0.0, beta1=-1.0, beta2=0.8, sigma0=0.8, sigma1=0.2,
                         a=1.0, c=0.1, rho=0.3, x_star=1.0, u_max=1.0):
    def b(s, x, u):
        return beta0 + beta1 * np.tanh(x) + beta2 * u

    def sig(s, x, u):
        return sigma0 + sigma1 * np.tanh(x)

    def g0(s, x, u):
        return np.exp(-rho * s) * (a * np.tanh(x - x_star) ** 2 + c * (u / u_max) ** 2)

    return b, sig, g0


def hyperbolic(delta, T0):
    k = (np.exp(delta * T0) - 1.0) / T0

    def lam(tau):
        tau = np.asarray(tau, dtype=float)
        return np.where(tau < T0, 1.0 / (1.0 + k * tau), np.exp(-delta * tau))

    return lam


def exponential(delta):
    def lam(tau):
        return np.exp(-delta * np.asarray(tau, dtype=float))

    return lam


class Lattice:
    """Markov chain on x_0..x_{n-1} with step dt; one transition matrix per control."""

    def __init__(self, b, sig, controls, x_min=-4.0, x_max=4.0, n=41, dt=None):
        self.x = np.linspace(x_min, x_max, n)
        self.dx = self.x[1] - self.x[0]
        self.controls = np.asarray(controls, dtype=float)
        self.b, self.sig = b, sig
        if dt is None:
            worst = max(np.max(sig(0.0, self.x, u) ** 2 + np.abs(b(0.0, self.x, u)) * self.dx)
                        for u in self.controls)
            dt = 0.5 * self.dx ** 2 / worst
        self.dt = dt

    def matrix(self, s, u):
        n, dx, dt = len(self.x), self.dx, self.dt
        drift = self.b(s, self.x, u) * np.ones(n)
        diff = 0.5 * self.sig(s, self.x, u) ** 2 * np.ones(n)
        up = dt * (diff + np.maximum(drift, 0.0) * dx) / dx ** 2
        down = dt * (diff + np.maximum(-drift, 0.0) * dx) / dx ** 2
        P = np.zeros((n, n))
        for i in range(n):
            P[i, min(i + 1, n - 1)] += up[i]
            P[i, max(i - 1, 0)] += down[i]
            P[i, i] += 1.0 - up[i] - down[i]
        assert np.all(P >= -1e-15)
        return P

    def backward(self, g0, weight, t_from, t_to, terminal):
        """Dynamic program from t_to back to t_from; returns values and argmin indices
        per step (row 0 is t_from)."""
        n_steps = int(round((t_to - t_from) / self.dt))
        times = t_from + self.dt * np.arange(n_steps + 1)
        v = np.array(terminal, dtype=float)
        values = [v]
        choice = []
        for k in range(n_steps - 1, -1, -1):
            s = times[k]
            cand = np.array([weight(s) * g0(s, self.x, u) * self.dt + self.matrix(s, u) @ v
                             for u in self.controls])
            idx = np.argmin(cand, axis=0)
            srt = np.sort(cand, axis=0)
            margin = srt[1] - srt[0]
            v = cand[idx, np.arange(len(self.x))]
            values.append(v)
            choice.append((idx, margin))
        values.reverse()
        choice.reverse()
        return times, np.array(values), choice


def naive_plan_gap(lam, delta, T0, t_rev, params=None, n=41, controls=None, horizon_pad=40.0):
    """Compare the plan made at time 0 with the plan made at ``t_rev`` at time t_rev.

    Both plans are pre-committed dynamic programs over [anchor, anchor + T0]
    with weight lam(s - anchor) and terminal exp(delta*anchor) W(anchor + T0),
    where W is the exponentially discounted tail value. Returns the number of
    lattice nodes whose chosen controls differ with a decision margin above
    1e-9 and the number of nodes compared.
    """
    b, sig, g0 = catalog_coefficients(**(params or {}))
    controls = np.linspace(-1, 1, 5) if controls is None else controls
    lat = Lattice(b, sig, controls, n=n)
    # the step must divide t_rev and T0 exactly
    per_rev = int(np.ceil(t_rev / lat.dt))
    lat.dt = t_rev / per_rev
    assert abs(round(T0 / lat.dt) * lat.dt - T0) < 1e-12
    assert abs(round(t_rev / lat.dt) * lat.dt - t_rev) < 1e-12
    end = t_rev + T0 + horizon_pad
    end = T0 + lat.dt * np.ceil((end - T0) / lat.dt)
    tail_t, tail_v, _ = lat.backward(g0, lambda s: np.exp(-delta * s), T0, end,
                                     np.zeros(len(lat.x)))

    def plan(anchor):
        j = int(round(anchor / lat.dt))
        terminal = np.exp(delta * anchor) * tail_v[j]
        return lat.backward(g0, lambda s: lam(s - anchor), anchor, anchor + T0, terminal)

    _, _, choice0 = plan(0.0)
    _, _, choice1 = plan(t_rev)
    k = int(round(t_rev / lat.dt))
    if k >= len(choice0):
        raise ValueError("revision time must lie inside the first plan's window")
    idx0, margin0 = choice0[k]
    idx1, margin1 = choice1[0]
    robust = (margin0 > 1e-9) & (margin1 > 1e-9)
    differ = (idx0 != idx1) & robust
    return int(differ.sum()), int(robust.sum())


def ou_variance(theta, sigma, t):
    """Var X(t) for dX = -theta X dt + sigma dW from a fixed start."""
    return sigma ** 2 * (1.0 - np.exp(-2.0 * theta * t)) / (2.0 * theta)


def discounted_constant(c, delta, span):
    """int_0^span c exp(-delta s) ds."""
    return c * (1.0 - np.exp(-delta * span)) / delta


def exp_cost_value(rho, t, T):
    """int_t^T exp(-rho s) ds."""
    return (np.exp(-rho * t) - np.exp(-rho * T)) / rho


def tail_integral_exp(delta, r, H):
    """int_r^H exp(-delta (s - r)) exp(-s) ds."""
    return np.exp(-r) * (1.0 - np.exp(-(1.0 + delta) * (H - r))) / (1.0 + delta)


def heat_smoothing(h, x, variance, n_nodes=80):
    """E h(x + sqrt(variance) Z) for standard normal Z, by Gauss-Hermite."""
    z, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    x = np.asarray(x, dtype=float)
    return (h(x[:, None] + np.sqrt(variance) * z[None, :]) @ w) / np.sqrt(2.0 * np.pi)
